#pragma once

#include <stdexcept>
#include <string>

namespace foresp {

enum class Errc {
    invalid_argument,
    invalid_length,
    duration_too_long,
    period_too_short,
    period_not_aligned,
    duration_too_short,
    too_few_periods,
    empty_table,
    nyquist_violation,
    zero_signal,
    would_clip,
    signal_too_short,
    nonpositive_frequency,
    insufficient_voicing,
    loopback_mismatch,
    no_voicing,
    unstable_level,
    already_calibrated,
    device_unavailable,
    engine_busy,
    storage_failure,
    nothing_to_save,
    parse_error,
    validation_error,
    not_saved,
    model_invalid,
    invalid_state,
    unknown_command,
    bad_message,
};

// Wire name, e.g. "invalid-state".
const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what);
    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace foresp
