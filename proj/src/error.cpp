#include "foresp/error.hpp"

namespace foresp {

const char* errc_name(Errc c)
{
    switch (c) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::invalid_length: return "invalid-length";
    case Errc::duration_too_long: return "duration-too-long";
    case Errc::period_too_short: return "period-too-short";
    case Errc::period_not_aligned: return "period-not-aligned";
    case Errc::duration_too_short: return "duration-too-short";
    case Errc::too_few_periods: return "too-few-periods";
    case Errc::empty_table: return "empty-table";
    case Errc::nyquist_violation: return "nyquist-violation";
    case Errc::zero_signal: return "zero-signal";
    case Errc::would_clip: return "would-clip";
    case Errc::signal_too_short: return "signal-too-short";
    case Errc::nonpositive_frequency: return "nonpositive-frequency";
    case Errc::insufficient_voicing: return "insufficient-voicing";
    case Errc::loopback_mismatch: return "loopback-mismatch";
    case Errc::no_voicing: return "no-voicing";
    case Errc::unstable_level: return "unstable-level";
    case Errc::already_calibrated: return "already-calibrated";
    case Errc::device_unavailable: return "device-unavailable";
    case Errc::engine_busy: return "engine-busy";
    case Errc::storage_failure: return "storage-failure";
    case Errc::nothing_to_save: return "nothing-to-save";
    case Errc::parse_error: return "parse-error";
    case Errc::validation_error: return "validation-error";
    case Errc::not_saved: return "not-saved";
    case Errc::model_invalid: return "model-invalid";
    case Errc::invalid_state: return "invalid-state";
    case Errc::unknown_command: return "unknown-command";
    case Errc::bad_message: return "bad-message";
    }
    return "unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(what), code_(code)
{
}

} // namespace foresp
