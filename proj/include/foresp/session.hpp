#pragma once

#include "foresp/analyzer.hpp"
#include "foresp/calibration.hpp"
#include "foresp/stimulus.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace foresp {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kRootEnvVar = "FORESP_ROOT";

using Clock = std::chrono::system_clock;

// "YYYYMMDDThhmmssSSS_<kind>" in UTC; kind reduced to [A-Za-z0-9_-].
std::string format_unique_name(Clock::time_point t, const std::string& kind);
// "2021-06-01T12:34:56.789Z"
std::string iso8601(Clock::time_point t);

struct ExperimentConditions {
    std::vector<double> fo_choices{110.0, 220.0, 440.0};
    std::vector<double> target_fo_choices{110.0, 220.0, 440.0};
    double depth = 100.0;
    std::vector<int> combination_ids; // empty: every catalog entry
    SignalType default_type = SignalType::SINES;
    Normalization default_normalization = Normalization::PEAK;
    PhaseAlloc default_phase = PhaseAlloc::SCH;
    bool operator==(const ExperimentConditions&) const = default;
};

nlohmann::json conditions_to_json(const ExperimentConditions& c);
// validation-error for bad values, unknown combination ids or a wrong
// schema_version.
ExperimentConditions conditions_from_json(const nlohmann::json& j, std::size_t n_combinations);
// parse-error when the file is missing or not JSON.
ExperimentConditions load_condition_file(const std::filesystem::path& path, std::size_t n_combinations);

enum class ArtifactKind { test_signal, recording, memo };
const char* to_string(ArtifactKind k);

struct ArtifactRecord {
    std::string id;
    ArtifactKind kind = ArtifactKind::recording;
    std::filesystem::path wav;
    std::filesystem::path sidecar;
};

// Sidecar path for a WAV path (same stem, .json).
std::filesystem::path sidecar_path(const std::filesystem::path& wav);

// Stand-alone writers used by the store and the CLI.
nlohmann::json write_test_signal(const std::filesystem::path& wav, const TestSignal& sig, const std::string& id,
                                 const std::optional<CalibrationGain>& cal, const std::string& created);
nlohmann::json write_recording(const std::filesystem::path& wav, const RecordingPair& rec, const std::string& id,
                               const std::string& created, const nlohmann::json& extra = nlohmann::json::object());

struct LoadedRecording {
    RecordingPair pair;
    nlohmann::json sidecar;
};
// Reads a stereo recording and its sidecar (spec, calibration).
LoadedRecording load_recording(const std::filesystem::path& wav);

std::vector<nlohmann::json> read_log(const std::filesystem::path& log_path);

// Storage root from the environment override, else `fallback`.
std::filesystem::path storage_root(const std::filesystem::path& fallback);

class SessionStore {
public:
    explicit SessionStore(std::filesystem::path root, std::function<Clock::time_point()> clock = Clock::now);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path log_path() const { return root_ / "log.jsonl"; }
    std::string now_iso() const { return iso8601(clock_()); }

    // Unique across this store's lifetime and the files already on disk.
    std::string unique_name(const std::string& kind);

    // One JSON line; payload keys are merged next to time/actor/action.
    nlohmann::json log_action(const std::string& actor, const std::string& action,
                              const nlohmann::json& payload = nlohmann::json::object());
    std::size_t log_lines() const;

    std::string save_test_signal(const TestSignal& sig, const std::optional<CalibrationGain>& cal,
                                 const std::string& actor = "experimenter");
    // Writes files and logs; the analysis result is released by
    // analyze_saved().
    std::string save_recording(const RecordingPair& rec, const std::string& actor = "experimenter",
                               const nlohmann::json& extra = nlohmann::json::object());
    std::string save_memo(std::span<const double> voice, double fs, const std::string& actor = "experimenter");

    // Runs the analyzer on a saved recording and writes results/<id>.json
    // and .csv. Analyzer errors are stored as the result.
    nlohmann::json analyze_saved(const std::string& id, const CombinationCatalog& catalog,
                                 const AnalyzerOptions& opt = {});
    // not-saved unless `id` is a saved recording with a finished analysis.
    nlohmann::json analysis(const std::string& id) const;
    bool is_saved(const std::string& id) const;
    std::optional<ArtifactRecord> artifact(const std::string& id) const;

    // Validates, copies to <root>/conditions.json and logs.
    ExperimentConditions load_conditions(const std::filesystem::path& path, std::size_t n_combinations,
                                         const std::string& actor = "experimenter");

private:
    std::filesystem::path dir(ArtifactKind k) const;

    std::filesystem::path root_;
    std::function<Clock::time_point()> clock_;
    mutable std::mutex mu_; // serializes log writes and the index
    std::set<std::string> issued_;
    std::map<std::string, ArtifactRecord> index_;
    std::map<std::string, nlohmann::json> results_;
    std::size_t log_lines_ = 0;
};

} // namespace foresp
