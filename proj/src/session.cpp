#include "foresp/session.hpp"

#include "foresp/error.hpp"
#include "foresp/wav.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

namespace foresp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::tm utc_tm(Clock::time_point t, int& millis)
{
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
    long long secs = ms / 1000;
    millis = static_cast<int>(ms % 1000);
    if (millis < 0) {
        millis += 1000;
        --secs;
    }
    const std::time_t tt = static_cast<std::time_t>(secs);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    return tm;
}

std::string sanitize_kind(const std::string& kind)
{
    std::string out;
    for (char c : kind)
        if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-')
            out += c;
    return out.empty() ? "artifact" : out;
}

void write_text_atomic(const fs::path& path, const std::string& text)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw Error(Errc::storage_failure, "cannot write " + tmp.string());
        f << text;
        if (!f)
            throw Error(Errc::storage_failure, "write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw Error(Errc::storage_failure, "cannot rename to " + path.string() + ": " + ec.message());
}

std::vector<double> checked_positive_list(const json& j, const char* key)
{
    if (!j.is_array() || j.empty())
        throw Error(Errc::validation_error, std::string(key) + " must be a non-empty array");
    std::vector<double> v;
    for (const auto& e : j) {
        if (!e.is_number())
            throw Error(Errc::validation_error, std::string(key) + " entries must be numbers");
        const double x = e.get<double>();
        if (!(x > 0.0) || !std::isfinite(x))
            throw Error(Errc::validation_error, std::string(key) + " entries must be positive");
        v.push_back(x);
    }
    return v;
}

json codes_to_json(const CodeMatrix& c)
{
    json rows = json::array();
    for (const auto& r : c.rows)
        rows.push_back(r);
    return rows;
}

} // namespace

std::string format_unique_name(Clock::time_point t, const std::string& kind)
{
    int ms = 0;
    const std::tm tm = utc_tm(t, ms);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d%02d%02dT%02d%02d%02d%03d", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
    return std::string(buf) + "_" + sanitize_kind(kind);
}

std::string iso8601(Clock::time_point t)
{
    int ms = 0;
    const std::tm tm = utc_tm(t, ms);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
    return buf;
}

// ----------------------------------------------------------- conditions

json conditions_to_json(const ExperimentConditions& c)
{
    return json{{"schema_version", kSchemaVersion},
                {"fo_choices", c.fo_choices},
                {"target_fo_choices", c.target_fo_choices},
                {"depth", c.depth},
                {"combination_ids", c.combination_ids},
                {"defaults",
                 {{"signal_type", to_string(c.default_type)},
                  {"normalization", to_string(c.default_normalization)},
                  {"phase_alloc", to_string(c.default_phase)}}}};
}

ExperimentConditions conditions_from_json(const json& j, std::size_t n_combinations)
{
    if (!j.is_object())
        throw Error(Errc::validation_error, "condition file must hold a JSON object");
    if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
        j["schema_version"].get<int>() != kSchemaVersion)
        throw Error(Errc::validation_error, "unsupported or missing schema_version");
    ExperimentConditions c;
    if (j.contains("fo_choices"))
        c.fo_choices = checked_positive_list(j["fo_choices"], "fo_choices");
    if (j.contains("target_fo_choices"))
        c.target_fo_choices = checked_positive_list(j["target_fo_choices"], "target_fo_choices");
    if (j.contains("depth")) {
        if (!j["depth"].is_number())
            throw Error(Errc::validation_error, "depth must be a number");
        c.depth = j["depth"].get<double>();
        if (!(c.depth >= 0.0) || !std::isfinite(c.depth))
            throw Error(Errc::validation_error, "depth must be >= 0");
    }
    if (j.contains("combination_ids")) {
        if (!j["combination_ids"].is_array())
            throw Error(Errc::validation_error, "combination_ids must be an array");
        for (const auto& e : j["combination_ids"]) {
            if (!e.is_number_integer())
                throw Error(Errc::validation_error, "combination ids must be integers");
            const int id = e.get<int>();
            if (id < 0 || static_cast<std::size_t>(id) >= n_combinations)
                throw Error(Errc::validation_error, "unknown combination id " + std::to_string(id));
            c.combination_ids.push_back(id);
        }
    }
    if (j.contains("defaults")) {
        const auto& d = j["defaults"];
        try {
            if (d.contains("signal_type"))
                c.default_type = signal_type_from(d["signal_type"].get<std::string>());
            if (d.contains("normalization"))
                c.default_normalization = normalization_from(d["normalization"].get<std::string>());
            if (d.contains("phase_alloc"))
                c.default_phase = phase_alloc_from(d["phase_alloc"].get<std::string>());
        } catch (const json::exception& e) {
            throw Error(Errc::validation_error, std::string("defaults: ") + e.what());
        }
    }
    return c;
}

ExperimentConditions load_condition_file(const fs::path& path, std::size_t n_combinations)
{
    std::ifstream f(path);
    if (!f)
        throw Error(Errc::parse_error, "cannot open condition file " + path.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw Error(Errc::parse_error, std::string("condition file is not JSON: ") + e.what());
    }
    return conditions_from_json(j, n_combinations);
}

// ---------------------------------------------------------- artifacts

const char* to_string(ArtifactKind k)
{
    switch (k) {
    case ArtifactKind::test_signal: return "test_signal";
    case ArtifactKind::recording: return "recording";
    case ArtifactKind::memo: return "memo";
    }
    return "?";
}

fs::path sidecar_path(const fs::path& wav)
{
    fs::path p = wav;
    p.replace_extension(".json");
    return p;
}

json write_test_signal(const fs::path& wav, const TestSignal& sig, const std::string& id,
                       const std::optional<CalibrationGain>& cal, const std::string& created)
{
    if (sig.samples.empty())
        throw Error(Errc::nothing_to_save, "test signal is empty");
    WavData w;
    w.fs = sig.spec.fs;
    w.bits = 24;
    w.channels = {sig.samples};
    w.comment = id;
    write_wav(wav, w);
    json side{{"schema_version", kSchemaVersion},
              {"id", id},
              {"kind", "test_signal"},
              {"created", created},
              {"wav", wav.filename().string()},
              {"fs", sig.spec.fs},
              {"length", sig.samples.size()},
              {"channels", {"signal"}},
              {"spec", spec_to_json(sig.spec)},
              {"applied_gain", sig.applied_gain},
              {"n_periods", sig.n_periods},
              {"codes", codes_to_json(sig.codes)},
              {"calibration", cal ? gain_to_json(*cal) : json(nullptr)}};
    write_text_atomic(sidecar_path(wav), side.dump(2));
    return side;
}

json write_recording(const fs::path& wav, const RecordingPair& rec, const std::string& id, const std::string& created,
                     const json& extra)
{
    if (rec.voice.empty() && rec.loopback.empty())
        throw Error(Errc::nothing_to_save, "recording is empty");
    WavData w;
    w.fs = rec.fs;
    w.bits = 24;
    w.channels = {rec.voice, rec.loopback};
    w.comment = id;
    write_wav(wav, w);
    json side{{"schema_version", kSchemaVersion},
              {"id", id},
              {"kind", "recording"},
              {"created", created},
              {"wav", wav.filename().string()},
              {"fs", rec.fs},
              {"length", std::max(rec.voice.size(), rec.loopback.size())},
              {"channels", {"voice", "loopback"}},
              {"spec", spec_to_json(rec.spec)},
              {"calibration_offset_db", rec.calibration_gain ? json(*rec.calibration_gain) : json(nullptr)}};
    for (const auto& [k, v] : extra.items())
        side[k] = v;
    write_text_atomic(sidecar_path(wav), side.dump(2));
    return side;
}

LoadedRecording load_recording(const fs::path& wav)
{
    LoadedRecording out;
    const WavData w = read_wav(wav);
    if (w.channels.size() != 2)
        throw Error(Errc::parse_error, "recording must be stereo (voice, loop-back)");
    out.pair.voice = w.channels[0];
    out.pair.loopback = w.channels[1];
    out.pair.fs = w.fs;
    const fs::path side = sidecar_path(wav);
    std::ifstream f(side);
    if (!f)
        throw Error(Errc::parse_error, "missing sidecar " + side.string());
    try {
        out.sidecar = json::parse(f);
    } catch (const json::exception& e) {
        throw Error(Errc::parse_error, std::string("sidecar is not JSON: ") + e.what());
    }
    if (out.sidecar.contains("spec"))
        out.pair.spec = spec_from_json(out.sidecar["spec"]);
    out.pair.spec.fs = w.fs;
    if (out.sidecar.contains("calibration_offset_db") && out.sidecar["calibration_offset_db"].is_number())
        out.pair.calibration_gain = out.sidecar["calibration_offset_db"].get<double>();
    return out;
}

std::vector<json> read_log(const fs::path& log_path)
{
    std::ifstream f(log_path);
    if (!f)
        throw Error(Errc::parse_error, "cannot open log " + log_path.string());
    std::vector<json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(f, line)) {
        ++n;
        if (line.empty())
            continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(Errc::parse_error, "log line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

fs::path storage_root(const fs::path& fallback)
{
    if (const char* env = std::getenv(kRootEnvVar); env && *env)
        return env;
    return fallback;
}

// --------------------------------------------------------------- store

SessionStore::SessionStore(fs::path root, std::function<Clock::time_point()> clock)
    : root_(std::move(root)), clock_(std::move(clock))
{
    std::error_code ec;
    for (const char* sub : {"recordings", "testsignals", "memos", "results"}) {
        fs::create_directories(root_ / sub, ec);
        if (ec)
            throw Error(Errc::storage_failure, "cannot create " + (root_ / sub).string() + ": " + ec.message());
    }
    if (fs::exists(log_path())) {
        std::ifstream f(log_path());
        std::string line;
        while (std::getline(f, line))
            if (!line.empty())
                ++log_lines_;
    }
}

fs::path SessionStore::dir(ArtifactKind k) const
{
    switch (k) {
    case ArtifactKind::test_signal: return root_ / "testsignals";
    case ArtifactKind::recording: return root_ / "recordings";
    case ArtifactKind::memo: return root_ / "memos";
    }
    return root_;
}

std::string SessionStore::unique_name(const std::string& kind)
{
    std::lock_guard lock(mu_);
    const std::string base = format_unique_name(clock_(), kind);
    auto taken = [&](const std::string& n) {
        if (issued_.count(n))
            return true;
        for (auto k : {ArtifactKind::test_signal, ArtifactKind::recording, ArtifactKind::memo})
            if (fs::exists(dir(k) / (n + ".wav")))
                return true;
        return false;
    };
    std::string name = base;
    for (int i = 1; taken(name); ++i)
        name = base + "_" + std::to_string(i);
    issued_.insert(name);
    return name;
}

json SessionStore::log_action(const std::string& actor, const std::string& action, const json& payload)
{
    json line = json::object();
    line["time"] = now_iso();
    line["actor"] = actor;
    line["action"] = action;
    for (const auto& [k, v] : payload.items())
        if (k != "time" && k != "actor" && k != "action")
            line[k] = v;
    std::lock_guard lock(mu_);
    std::ofstream f(log_path(), std::ios::app | std::ios::binary);
    if (!f)
        throw Error(Errc::storage_failure, "cannot open " + log_path().string());
    f << line.dump() << '\n';
    f.flush();
    if (!f)
        throw Error(Errc::storage_failure, "log write failed");
    ++log_lines_;
    return line;
}

std::size_t SessionStore::log_lines() const
{
    std::lock_guard lock(mu_);
    return log_lines_;
}

std::string SessionStore::save_test_signal(const TestSignal& sig, const std::optional<CalibrationGain>& cal,
                                           const std::string& actor)
{
    if (sig.samples.empty())
        throw Error(Errc::nothing_to_save, "test signal is empty");
    const std::string id = unique_name("testsignal");
    const fs::path wav = dir(ArtifactKind::test_signal) / (id + ".wav");
    write_test_signal(wav, sig, id, cal, now_iso());
    {
        std::lock_guard lock(mu_);
        index_[id] = ArtifactRecord{id, ArtifactKind::test_signal, wav, sidecar_path(wav)};
    }
    log_action(actor, "save_test_signal",
               {{"artifact", id}, {"file", fs::relative(wav, root_).string()}, {"spec", spec_to_json(sig.spec)}});
    return id;
}

std::string SessionStore::save_recording(const RecordingPair& rec, const std::string& actor, const json& extra)
{
    if (rec.voice.empty() || rec.loopback.empty())
        throw Error(Errc::nothing_to_save, "no recording to save");
    const std::string id = unique_name("rec");
    const fs::path wav = dir(ArtifactKind::recording) / (id + ".wav");
    write_recording(wav, rec, id, now_iso(), extra);
    {
        std::lock_guard lock(mu_);
        index_[id] = ArtifactRecord{id, ArtifactKind::recording, wav, sidecar_path(wav)};
    }
    log_action(actor, "save_recording",
               {{"artifact", id}, {"file", fs::relative(wav, root_).string()}, {"spec", spec_to_json(rec.spec)}});
    return id;
}

std::string SessionStore::save_memo(std::span<const double> voice, double fs_, const std::string& actor)
{
    if (voice.empty())
        throw Error(Errc::nothing_to_save, "memo is empty");
    const std::string id = unique_name("memo");
    const fs::path wav = dir(ArtifactKind::memo) / (id + ".wav");
    WavData w;
    w.fs = fs_;
    w.bits = 16;
    w.channels = {std::vector<double>(voice.begin(), voice.end())};
    w.comment = id;
    write_wav(wav, w);
    const json side{{"schema_version", kSchemaVersion}, {"id", id},           {"kind", "memo"},
                    {"created", now_iso()},            {"wav", wav.filename().string()},
                    {"fs", fs_},                       {"length", voice.size()}};
    write_text_atomic(sidecar_path(wav), side.dump(2));
    {
        std::lock_guard lock(mu_);
        index_[id] = ArtifactRecord{id, ArtifactKind::memo, wav, sidecar_path(wav)};
    }
    log_action(actor, "save_memo",
               {{"artifact", id}, {"file", fs::relative(wav, root_).string()}, {"samples", voice.size()}});
    return id;
}

json SessionStore::analyze_saved(const std::string& id, const CombinationCatalog& catalog, const AnalyzerOptions& opt)
{
    const auto rec = artifact(id);
    if (!rec || rec->kind != ArtifactKind::recording)
        throw Error(Errc::not_saved, "no saved recording " + id);
    // Analysis reads the saved file back, so what is shown is what was kept.
    const LoadedRecording loaded = load_recording(rec->wav);
    json result;
    std::string csv;
    try {
        const AnalysisResult r = analyze_recording(loaded.pair, catalog, opt);
        result = result_to_json(r);
        csv = result_to_csv(r);
    } catch (const Error& e) {
        result = json{{"error", {{"code", errc_name(e.code())}, {"message", e.what()}}}};
    }
    result["artifact"] = id;
    write_text_atomic(root_ / "results" / (id + ".json"), result.dump());
    if (!csv.empty())
        write_text_atomic(root_ / "results" / (id + ".csv"), csv);
    std::lock_guard lock(mu_);
    results_[id] = result;
    return result;
}

json SessionStore::analysis(const std::string& id) const
{
    std::lock_guard lock(mu_);
    const auto it = results_.find(id);
    if (it == results_.end())
        throw Error(Errc::not_saved, "analysis is only available for saved recordings: " + id);
    return it->second;
}

bool SessionStore::is_saved(const std::string& id) const
{
    std::lock_guard lock(mu_);
    return index_.count(id) != 0;
}

std::optional<ArtifactRecord> SessionStore::artifact(const std::string& id) const
{
    std::lock_guard lock(mu_);
    const auto it = index_.find(id);
    if (it == index_.end())
        return std::nullopt;
    return it->second;
}

ExperimentConditions SessionStore::load_conditions(const fs::path& path, std::size_t n_combinations,
                                                   const std::string& actor)
{
    ExperimentConditions c = load_condition_file(path, n_combinations);
    write_text_atomic(root_ / "conditions.json", conditions_to_json(c).dump(2));
    log_action(actor, "update_settings", {{"path", path.string()}, {"conditions", conditions_to_json(c)}});
    return c;
}

} // namespace foresp
