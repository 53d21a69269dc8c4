#include "foresp/service.hpp"

#include "foresp/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace foresp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kMemoSeconds = 5.0;
constexpr double kRingSeconds = 4.0;

struct CommandName {
    Command c;
    const char* name;
};
constexpr CommandName kCommands[] = {
    {Command::list_devices, "list_devices"},
    {Command::select_device, "select_device"},
    {Command::calib_start, "calib_start"},
    {Command::calib_stop, "calib_stop"},
    {Command::bind_reference, "bind_reference"},
    {Command::reset_calibration, "reset_calibration"},
    {Command::set_spec, "set_spec"},
    {Command::save_test_signal, "save_test_signal"},
    {Command::update_settings, "update_settings"},
    {Command::voice_check_start, "voice_check_start"},
    {Command::voice_check_stop, "voice_check_stop"},
    {Command::test_start, "test_start"},
    {Command::test_stop, "test_stop"},
    {Command::play, "play"},
    {Command::stop, "stop"},
    {Command::save, "save"},
    {Command::memo5s, "memo5s"},
    {Command::get_analysis, "get_analysis"},
    {Command::get_state, "get_state"},
};

json state_json(const Workflow& wf, const StimulusSpec& spec, const std::optional<CalibrationGain>& cal,
                const ExperimentConditions& cond, const std::string& device,
                const std::optional<std::string>& last_artifact, const std::optional<std::string>& last_recording)
{
    return json{{"phase", to_string(wf.phase)},
                {"spec", spec_to_json(spec)},
                {"calibration", cal ? gain_to_json(*cal) : json(nullptr)},
                {"conditions", conditions_to_json(cond)},
                {"device", device},
                {"last_artifact", last_artifact ? json(*last_artifact) : json(nullptr)},
                {"last_recording", last_recording ? json(*last_recording) : json(nullptr)}};
}

json error_reply(const json& id, Errc code, const std::string& message, const std::string& reason = {})
{
    json err{{"code", errc_name(code)}, {"message", message}};
    if (!reason.empty())
        err["reason"] = reason;
    return json{{"id", id}, {"ok", false}, {"error", err}};
}

std::shared_ptr<const std::vector<float>> to_float(std::span<const double> x)
{
    return std::make_shared<const std::vector<float>>(x.begin(), x.end());
}

std::vector<double> to_double(const std::vector<float>& x, std::size_t n)
{
    return std::vector<double>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(std::min(n, x.size())));
}

// One second of a steady harmonic voice; an integer number of cycles for
// integer f_o, so it loops without a seam.
std::vector<double> steady_voice(double fo, double amplitude)
{
    std::vector<Component> vowel;
    for (int k = 1; k <= 10 && k * fo < kSampleRate / 2; ++k)
        vowel.push_back({k, 1.0 / k});
    const std::vector<double> flat(static_cast<std::size_t>(kSampleRate), 0.0);
    auto v = synthesize_fm(vowel, std::vector<double>(vowel.size(), 0.0), fo, flat, kSampleRate);
    for (auto& x : v)
        x *= amplitude;
    return v;
}

json nan_to_null(double v)
{
    return std::isfinite(v) ? json(v) : json(nullptr);
}

} // namespace

const char* to_string(Phase p)
{
    switch (p) {
    case Phase::uncalibrated: return "uncalibrated";
    case Phase::calibrated: return "calibrated";
    case Phase::voice_check: return "voice_check";
    case Phase::testing: return "testing";
    case Phase::recorded: return "recorded";
    case Phase::saved: return "saved";
    }
    return "?";
}

const char* to_string(Activity a)
{
    switch (a) {
    case Activity::none: return "none";
    case Activity::calibration: return "calibration";
    case Activity::voice_check: return "voice_check";
    case Activity::testing: return "testing";
    case Activity::playback: return "playback";
    case Activity::memo: return "memo";
    }
    return "?";
}

const char* to_string(Command c)
{
    for (const auto& e : kCommands)
        if (e.c == c)
            return e.name;
    return "?";
}

Phase phase_from(const std::string& s)
{
    for (Phase p : {Phase::uncalibrated, Phase::calibrated, Phase::voice_check, Phase::testing, Phase::recorded,
                    Phase::saved})
        if (s == to_string(p))
            return p;
    throw Error(Errc::parse_error, "unknown phase " + s);
}

std::optional<Command> command_from(const std::string& s)
{
    for (const auto& e : kCommands)
        if (s == e.name)
            return e.c;
    return std::nullopt;
}

// ------------------------------------------------------------ workflow

Gate workflow_check(const Workflow& w, Command c)
{
    const Gate ok{};
    const bool idle = w.activity == Activity::none;
    const Gate busy{false, Errc::engine_busy, std::string(to_string(w.activity)) + " is running"};
    auto refuse = [](std::string reason) { return Gate{false, Errc::invalid_state, std::move(reason)}; };

    switch (c) {
    case Command::list_devices:
    case Command::get_state:
        return ok;
    case Command::get_analysis:
        return w.phase == Phase::saved ? ok : refuse("not-saved");
    case Command::select_device:
    case Command::calib_start:
    case Command::reset_calibration:
    case Command::set_spec:
    case Command::save_test_signal:
    case Command::update_settings:
    case Command::memo5s:
        return idle ? ok : busy;
    case Command::calib_stop:
        return w.activity == Activity::calibration ? ok : refuse("calibration is not running");
    case Command::bind_reference:
        if (w.phase != Phase::uncalibrated)
            return Gate{false, Errc::already_calibrated, "already calibrated; reset first"};
        return w.activity == Activity::calibration ? ok : refuse("start calibration first");
    case Command::voice_check_start:
    case Command::test_start:
        if (!idle)
            return busy;
        return w.phase == Phase::uncalibrated ? refuse("uncalibrated") : ok;
    case Command::voice_check_stop:
        return w.activity == Activity::voice_check ? ok : refuse("voice check is not running");
    case Command::test_stop:
        return w.activity == Activity::testing ? ok : refuse("no test is running");
    case Command::play:
        if (!idle)
            return busy;
        return (w.phase == Phase::recorded || w.phase == Phase::saved) ? ok : refuse("nothing recorded");
    case Command::stop:
        return idle ? refuse("nothing is running") : ok;
    case Command::save:
        if (!idle)
            return busy;
        if (w.phase == Phase::recorded)
            return ok;
        return refuse(w.phase == Phase::saved ? "already saved" : "nothing recorded");
    }
    return refuse("unknown command");
}

void workflow_apply(Workflow& w, Command c)
{
    switch (c) {
    case Command::calib_start: w.activity = Activity::calibration; break;
    case Command::calib_stop: w.activity = Activity::none; break;
    case Command::bind_reference: w.phase = Phase::calibrated; break;
    case Command::reset_calibration: w.phase = Phase::uncalibrated; break;
    case Command::voice_check_start:
        w.resume = w.phase;
        w.phase = Phase::voice_check;
        w.activity = Activity::voice_check;
        break;
    case Command::test_start:
        // a new test discards the recording held in memory
        w.resume = Phase::calibrated;
        w.phase = Phase::testing;
        w.activity = Activity::testing;
        break;
    case Command::voice_check_stop:
    case Command::test_stop:
        w.phase = w.resume;
        w.activity = Activity::none;
        break;
    case Command::play: w.activity = Activity::playback; break;
    case Command::stop:
        if (w.activity == Activity::voice_check || w.activity == Activity::testing)
            w.phase = w.resume;
        w.activity = Activity::none;
        break;
    case Command::save: w.phase = Phase::saved; break;
    default: break;
    }
}

void workflow_complete(Workflow& w)
{
    if (w.activity == Activity::testing)
        w.phase = Phase::recorded;
    w.activity = Activity::none;
}

bool changes_state(Command c)
{
    return c != Command::list_devices && c != Command::get_analysis && c != Command::get_state;
}

StimulusSpec apply_conditions(StimulusSpec spec, const ExperimentConditions& c)
{
    auto offered = [](const std::vector<double>& v, double x) { return std::find(v.begin(), v.end(), x) != v.end(); };
    spec.depth = c.depth;
    if (!offered(c.fo_choices, spec.fo))
        spec.fo = c.fo_choices.front();
    if (!offered(c.target_fo_choices, spec.target_fo))
        spec.target_fo = c.target_fo_choices.front();
    if (!c.combination_ids.empty() &&
        std::find(c.combination_ids.begin(), c.combination_ids.end(), spec.combination_id) == c.combination_ids.end())
        spec.combination_id = c.combination_ids.front();
    return spec;
}

// --------------------------------------------------------- sim injector

class Service::SimInjector final : public InputInjector {
public:
    enum class Mode { silence, coupling, loop, once };

    void set(Mode m, std::shared_ptr<const std::vector<float>> voice = {}, float gain = 1.0f)
    {
        mode_ = m;
        voice_ = std::move(voice);
        gain_ = gain;
    }

    void inject(std::uint64_t pos, std::span<const float> played, std::span<float> mic) override
    {
        switch (mode_) {
        case Mode::silence: break;
        case Mode::coupling:
            for (std::size_t i = 0; i < mic.size(); ++i)
                mic[i] = gain_ * played[i];
            break;
        case Mode::loop: {
            const auto& v = *voice_;
            for (std::size_t i = 0; i < mic.size(); ++i)
                mic[i] = v[(pos + i) % v.size()];
            break;
        }
        case Mode::once: {
            const auto& v = *voice_;
            for (std::size_t i = 0; i < mic.size(); ++i)
                mic[i] = pos + i < v.size() ? v[pos + i] : 0.0f;
            break;
        }
        }
    }

private:
    Mode mode_ = Mode::silence;
    std::shared_ptr<const std::vector<float>> voice_;
    float gain_ = 1.0f;
};

// -------------------------------------------------------------- service

Service::Service(ServiceConfig cfg)
    : cfg_(std::move(cfg)), catalog_(cfg_.catalog ? *cfg_.catalog : default_catalog()), store_(cfg_.root, cfg_.clock)
{
    SimDeviceConfig dc;
    dc.speed = cfg_.speed;
    dc.latency = cfg_.loopback_latency;
    device_ = std::make_shared<SimulatedDevice>(dc);
    injector_ = std::make_shared<SimInjector>();
    device_->set_injector(injector_);
    device_name_ = device_->info().name;
    engine_ = std::make_unique<AudioEngine>(device_);
    store_.log_action("service", "service_start", {{"state", snapshot()}});
    if (cfg_.run_ticker)
        ticker_ = std::thread([this] { ticker_loop(); });
}

Service::~Service()
{
    quit_ = true;
    if (ticker_.joinable())
        ticker_.join();
    engine_->request_stop();
    engine_->wait();
    for (auto& [id, f] : analyses_)
        if (f.valid())
            f.wait();
}

json Service::snapshot() const
{
    std::lock_guard lock(mu_);
    return state_json(wf_, spec_, calibrator_.gain(), conditions_, device_name_, last_artifact_, last_recording_);
}

Workflow Service::workflow() const
{
    std::lock_guard lock(mu_);
    return wf_;
}

std::size_t Service::meter_readings() const
{
    std::lock_guard lock(mu_);
    return calibrator_.reading_count();
}

int Service::subscribe(EventSink sink)
{
    std::lock_guard lock(ev_mu_);
    const int token = next_token_++;
    sinks_[token] = std::move(sink);
    return token;
}

void Service::unsubscribe(int token)
{
    std::lock_guard lock(ev_mu_);
    sinks_.erase(token);
}

void Service::emit(const std::string& name, json data)
{
    std::lock_guard lock(ev_mu_);
    const json ev{{"event", name}, {"seq", ++seq_}, {"data", std::move(data)}};
    for (auto& [token, sink] : sinks_)
        sink(ev);
}

std::string Service::handle_text(const std::string& text)
{
    json msg;
    try {
        msg = json::parse(text);
    } catch (const json::exception& e) {
        return error_reply(nullptr, Errc::bad_message, std::string("not JSON: ") + e.what()).dump();
    }
    return handle_message(msg).dump();
}

json Service::handle_message(const json& msg)
{
    const json id = msg.is_object() && msg.contains("id") ? msg["id"] : json(nullptr);
    if (!msg.is_object() || !msg.contains("cmd") || !msg["cmd"].is_string())
        return error_reply(id, Errc::bad_message, "expected {id, cmd, params}");
    const json params = msg.contains("params") ? msg["params"] : json::object();
    if (!params.is_object())
        return error_reply(id, Errc::bad_message, "params must be an object");
    const auto cmd = command_from(msg["cmd"].get<std::string>());
    if (!cmd)
        return error_reply(id, Errc::unknown_command, "unknown command " + msg["cmd"].get<std::string>());

    std::unique_lock lock(mu_);
    poll_locked();
    try {
        if (*cmd == Command::get_analysis)
            return json{{"id", id}, {"ok", true}, {"payload", get_analysis(params, lock)}};
        const Gate g = workflow_check(wf_, *cmd);
        if (!g.ok)
            return error_reply(id, g.code, g.reason, g.code == Errc::invalid_state ? g.reason : std::string());
        json payload = dispatch(*cmd, params);
        return json{{"id", id}, {"ok", true}, {"payload", std::move(payload)}};
    } catch (const Error& e) {
        if (e.code() == Errc::not_saved)
            return error_reply(id, Errc::invalid_state, e.what(), "not-saved");
        return error_reply(id, e.code(), e.what());
    } catch (const json::exception& e) {
        return error_reply(id, Errc::bad_message, e.what());
    }
}

json Service::get_analysis(const json& params, std::unique_lock<std::mutex>&)
{
    std::string id;
    if (params.contains("artifact") && !params["artifact"].is_null()) {
        id = params["artifact"].get<std::string>();
    } else {
        const Gate g = workflow_check(wf_, Command::get_analysis);
        if (!g.ok || !last_recording_)
            throw Error(Errc::not_saved, "the current recording has not been saved");
        id = *last_recording_;
    }
    const auto it = analyses_.find(id);
    if (it == analyses_.end() || !store_.is_saved(id))
        throw Error(Errc::not_saved, "analysis is only available for saved recordings: " + id);
    // the worker never takes the control mutex
    it->second.wait();
    return store_.analysis(id);
}

json Service::dispatch(Command c, const json& params)
{
    const std::optional<CalibrationGain>& cal = calibrator_.gain();
    json payload = json::object();
    switch (c) {
    case Command::list_devices: {
        json list = json::array();
        for (const auto& d : enumerate_devices())
            list.push_back({{"name", d.name},
                            {"fs", d.fs},
                            {"in_channels", d.in_channels},
                            {"out_channels", d.out_channels},
                            {"simulated", d.simulated}});
        return {{"devices", list}, {"selected", device_name_}};
    }
    case Command::get_state: {
        payload = state_json(wf_, spec_, cal, conditions_, device_name_, last_artifact_, last_recording_);
        payload["activity"] = to_string(wf_.activity);
        payload["elapsed"] = wf_.activity == Activity::none ? 0.0 : engine_->elapsed();
        payload["has_recording"] = pending_.has_value();
        return payload;
    }
    case Command::get_analysis: break; // handled before dispatch
    case Command::select_device: {
        const std::string name = params.at("name").get<std::string>();
        open_device(name, device_->config()); // validates the name
        device_name_ = name;
        store_.log_action("experimenter", "select_device", {{"device", name}});
        return {{"device", name}};
    }
    case Command::calib_start:
        start_activity(Activity::calibration, 0);
        store_.log_action("experimenter", "calib_start");
        break;
    case Command::calib_stop:
    case Command::voice_check_stop:
    case Command::test_stop:
    case Command::stop: {
        const Activity was = wf_.activity;
        stop_activity();
        if (was == Activity::testing)
            pending_.reset();
        store_.log_action("experimenter", to_string(c), {{"activity", to_string(was)}});
        break;
    }
    case Command::bind_reference: {
        const int ref = params.at("reference").get<int>();
        if (ref != 70 && ref != 80)
            throw Error(Errc::validation_error, "reference must be 70 or 80 dB SPL");
        const CalibrationGain g = calibrator_.bind(ref, store_.now_iso());
        json entry = gain_to_json(g);
        entry["reference"] = ref;
        entry["spread_db"] = calibrator_.stability_std();
        store_.log_action("experimenter", "calibrate", entry);
        payload = gain_to_json(g);
        char text[96];
        std::snprintf(text, sizeof text, "%d dB SPL = %.1f dBFS (offset %.1f dB)", g.reference_spl, g.measured_dbfs,
                      g.offset_db);
        payload["text"] = text;
        break;
    }
    case Command::reset_calibration:
        calibrator_.reset();
        store_.log_action("experimenter", "reset_calibration");
        break;
    case Command::set_spec: {
        StimulusSpec s = spec_from_json(params, spec_);
        validate_spec(s);
        if (s.combination_id < 0 || static_cast<std::size_t>(s.combination_id) >= catalog_.combinations.size())
            throw Error(Errc::validation_error, "unknown combination id");
        spec_ = s;
        store_.log_action("experimenter", "set_spec", {{"spec", spec_to_json(spec_)}});
        return {{"spec", spec_to_json(spec_)}};
    }
    case Command::save_test_signal: {
        const TestSignal sig = make_test_signal(spec_, catalog_);
        const std::string id = store_.save_test_signal(sig, cal);
        last_artifact_ = id;
        return {{"artifact", id}};
    }
    case Command::update_settings: {
        fs::path path = params.at("path").get<std::string>();
        if (path.is_relative() && !fs::exists(path) && fs::exists(store_.root() / path))
            path = store_.root() / path;
        conditions_ = store_.load_conditions(path, catalog_.combinations.size());
        spec_ = apply_conditions(spec_, conditions_);
        return {{"conditions", conditions_to_json(conditions_)}, {"spec", spec_to_json(spec_)}};
    }
    case Command::voice_check_start:
        start_activity(Activity::voice_check, 0);
        store_.log_action("experimenter", "voice_check_start", {{"target_fo", spec_.target_fo}});
        break;
    case Command::test_start: {
        const TestSignal sig = make_test_signal(spec_, catalog_);
        SubjectModel m = cfg_.subject;
        m.base_fo = spec_.target_fo;
        const auto voice = simulate_subject(sig, m, cfg_.onset);
        out_buf_ = to_float(sig.samples);
        injector_->set(SimInjector::Mode::once, to_float(voice));
        pending_.reset();
        pending_extra_ = json{{"simulated", true},
                              {"subject_model", model_to_json(m)},
                              {"onset", cfg_.onset},
                              {"calibration", cal ? gain_to_json(*cal) : json(nullptr)}};
        start_activity(Activity::testing, sig.samples.size());
        store_.log_action("experimenter", "test_start", {{"spec", spec_to_json(spec_)}});
        payload = {{"samples", sig.samples.size()}, {"duration", spec_.duration}};
        break;
    }
    case Command::play: {
        if (!pending_)
            throw Error(Errc::invalid_state, "no recording in memory");
        out_buf_ = to_float(pending_->voice);
        start_activity(Activity::playback, pending_->voice.size());
        store_.log_action("experimenter", "play", {{"artifact", last_recording_ ? json(*last_recording_) : json()}});
        break;
    }
    case Command::save: {
        if (!pending_)
            throw Error(Errc::nothing_to_save, "no recording to save");
        const std::string id = store_.save_recording(*pending_, "experimenter", pending_extra_);
        last_artifact_ = id;
        last_recording_ = id;
        analyses_[id] = std::async(std::launch::async, [this, id] {
                            const json r = store_.analyze_saved(id, catalog_);
                            emit("analysis_ready", {{"artifact", id}, {"ok", !r.contains("error")}});
                        }).share();
        payload = {{"artifact", id}};
        break;
    }
    case Command::memo5s: {
        const auto n = static_cast<std::size_t>(std::llround(kMemoSeconds * kSampleRate));
        injector_->set(SimInjector::Mode::loop, to_float(steady_voice(spec_.target_fo, cfg_.subject.amplitude)));
        start_activity(Activity::memo, n);
        const LoopReport rep = engine_->wait();
        done_ = false;
        wf_.activity = Activity::none;
        const std::string id = store_.save_memo(to_double(capture_->voice(), capture_->size()), kSampleRate);
        last_artifact_ = id;
        emit("memo_saved", {{"artifact", id}, {"samples", capture_->size()}, {"underruns", rep.underruns}});
        return {{"artifact", id}, {"samples", capture_->size()}};
    }
    }
    workflow_apply(wf_, c);
    return payload;
}

void Service::start_activity(Activity a, std::size_t n_samples)
{
    if (engine_->running())
        throw Error(Errc::engine_busy, "another loop is active");
    engine_->wait(); // join a loop that already ended
    const double fs = kSampleRate;
    const auto ring_len = static_cast<std::size_t>(kRingSeconds * fs);
    done_ = false;
    processed_ = 0;
    last_second_ = 0;
    BlockSource* src = nullptr;
    BlockSink* sink = nullptr;
    LoopMode mode = LoopMode::response_test;
    switch (a) {
    case Activity::calibration: {
        out_buf_ = to_float(generate_pink_noise(10.0, fs, 7));
        source_ = std::make_unique<BufferSource>(out_buf_, true);
        ring_ = std::make_unique<SampleRing>(ring_len);
        ring_sink_ = std::make_unique<RingSink>(*ring_);
        calibrator_.clear_readings();
        injector_->set(SimInjector::Mode::coupling, {}, static_cast<float>(std::pow(10.0, cfg_.coupling_db / 20.0)));
        src = source_.get();
        sink = ring_sink_.get();
        mode = LoopMode::calibration;
        break;
    }
    case Activity::voice_check: {
        out_buf_ = to_float(make_target_signal(spec_));
        source_ = std::make_unique<BufferSource>(out_buf_, true);
        ring_ = std::make_unique<SampleRing>(ring_len);
        ring_sink_ = std::make_unique<RingSink>(*ring_);
        monitor_ = std::make_unique<LivePitchMonitor>(fs, spec_.target_fo);
        injector_->set(SimInjector::Mode::loop, to_float(steady_voice(spec_.target_fo, cfg_.subject.amplitude)));
        src = source_.get();
        sink = ring_sink_.get();
        mode = LoopMode::voice_check;
        break;
    }
    case Activity::testing:
        source_ = std::make_unique<BufferSource>(out_buf_, false);
        capture_ = std::make_unique<StereoCapture>(n_samples);
        src = source_.get();
        sink = capture_.get();
        mode = LoopMode::response_test;
        break;
    case Activity::playback:
        source_ = std::make_unique<BufferSource>(out_buf_, false);
        src = source_.get();
        mode = LoopMode::playback;
        break;
    case Activity::memo:
        capture_ = std::make_unique<StereoCapture>(n_samples);
        sink = capture_.get();
        mode = LoopMode::memo;
        wf_.activity = Activity::memo;
        break;
    case Activity::none: return;
    }
    engine_->start(mode, src, sink, n_samples, [this](const LoopReport&) { done_ = true; });
}

void Service::stop_activity()
{
    engine_->request_stop();
    engine_->wait();
    done_ = false;
    emit("stopped", {{"activity", to_string(wf_.activity)}, {"elapsed", engine_->elapsed()}});
}

void Service::finish_activity(const LoopReport& rep)
{
    const Activity a = wf_.activity;
    const json report{{"samples", rep.samples},
                      {"underruns", rep.underruns},
                      {"overruns", rep.overruns},
                      {"elapsed", rep.elapsed},
                      {"wall_seconds", rep.wall_seconds}};
    if (a == Activity::testing) {
        RecordingPair rec;
        rec.voice = to_double(capture_->voice(), capture_->size());
        rec.loopback = to_double(capture_->loopback(), capture_->size());
        rec.fs = kSampleRate;
        rec.spec = spec_;
        if (calibrator_.gain())
            rec.calibration_gain = calibrator_.gain()->offset_db;
        pending_ = std::move(rec);
        pending_extra_["loop_report"] = report;
        workflow_complete(wf_);
        store_.log_action("engine", "test_complete", report);
        emit("test_complete", report);
    } else if (a == Activity::playback) {
        workflow_complete(wf_);
        store_.log_action("engine", "playback_complete", report);
        emit("playback_complete", report);
    } else {
        workflow_complete(wf_);
    }
}

void Service::process_meter()
{
    const std::size_t B = kBlockSize;
    const auto win = static_cast<std::size_t>(kMeterWindow * kSampleRate);
    const std::uint64_t written = ring_->written();
    const std::uint64_t oldest = written > ring_->capacity() - win ? written - (ring_->capacity() - win) : 0;
    std::vector<float> buf(win);
    for (std::uint64_t end = processed_ + B; end <= written; end += B) {
        processed_ = end;
        if (end < win || end < oldest)
            continue;
        if (!ring_->snapshot_at(end, buf))
            continue;
        const double db = running_rms(std::span<const float>(buf));
        const double t = static_cast<double>(end) / kSampleRate;
        calibrator_.push_reading(db, t);
        json data{{"time", t}, {"dbfs", nan_to_null(db)}, {"display", meter_display(db)},
                  {"stability_std", nan_to_null(calibrator_.stability_std())}};
        if (calibrator_.gain())
            data["spl"] = nan_to_null(calibrator_.to_spl(db));
        emit("meter", std::move(data));
    }
}

void Service::process_pitch()
{
    const std::size_t B = kBlockSize;
    const std::size_t n = monitor_->window() + 1;
    const std::uint64_t written = ring_->written();
    const std::uint64_t oldest = written > ring_->capacity() - n ? written - (ring_->capacity() - n) : 0;
    std::vector<float> buf(n);
    for (std::uint64_t end = processed_ + B; end <= written; end += B) {
        processed_ = end;
        if (end < n || end < oldest)
            continue;
        if (!ring_->snapshot_at(end, buf))
            continue;
        const double t = static_cast<double>(end) / kSampleRate;
        const FoFrame f = monitor_->update(buf, t);
        emit("pitch", {{"time", t},
                       {"fo", nan_to_null(f.fo_hz)},
                       {"cents", nan_to_null(f.cents_re_target)},
                       {"voiced", f.voiced},
                       {"target_fo", monitor_->target()}});
    }
}

void Service::poll_locked()
{
    if (wf_.activity == Activity::calibration && ring_)
        process_meter();
    else if (wf_.activity == Activity::voice_check && ring_ && monitor_)
        process_pitch();
    if (wf_.activity != Activity::none && wf_.activity != Activity::memo) {
        const int s = static_cast<int>(std::floor(engine_->elapsed()));
        while (last_second_ < s) {
            ++last_second_;
            emit("elapsed", {{"seconds", last_second_}, {"activity", to_string(wf_.activity)}});
        }
    }
    if (wf_.activity != Activity::memo && done_.exchange(false)) {
        const LoopReport rep = engine_->wait();
        finish_activity(rep);
        idle_cv_.notify_all();
    }
}

void Service::poll()
{
    std::lock_guard lock(mu_);
    poll_locked();
}

bool Service::wait_idle(double timeout_s)
{
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    std::unique_lock lock(mu_);
    for (;;) {
        poll_locked();
        if (wf_.activity != Activity::testing && wf_.activity != Activity::playback)
            break;
        if (std::chrono::steady_clock::now() > deadline)
            return false;
        idle_cv_.wait_for(lock, std::chrono::milliseconds(5));
    }
    for (auto& [id, f] : analyses_)
        if (f.wait_until(deadline) != std::future_status::ready)
            return false;
    return true;
}

void Service::ticker_loop()
{
    const double block_s = static_cast<double>(kBlockSize) / kSampleRate;
    const double period = cfg_.speed > 0.0 ? std::max(0.002, 0.5 * block_s / cfg_.speed) : 0.002;
    while (!quit_.load()) {
        std::this_thread::sleep_for(std::chrono::duration<double>(period));
        std::lock_guard lock(mu_);
        poll_locked();
    }
}

// -------------------------------------------------------------- replay

json replay_state(const fs::path& root)
{
    const auto entries = read_log(root / "log.jsonl");
    Workflow wf;
    StimulusSpec spec;
    ExperimentConditions cond;
    std::optional<CalibrationGain> cal;
    std::string device = SimDeviceConfig{}.name;
    std::optional<std::string> last_artifact, last_recording;

    auto sidecar_of = [&](const json& e) {
        const fs::path wav = root / e.at("file").get<std::string>();
        std::ifstream f(sidecar_path(wav));
        if (!f)
            throw Error(Errc::parse_error, "missing sidecar for " + wav.string());
        json side = json::parse(f);
        if (side.at("id") != e.at("artifact"))
            throw Error(Errc::validation_error, "sidecar id does not match the log: " + wav.string());
        return side;
    };

    for (const auto& e : entries) {
        const std::string action = e.at("action").get<std::string>();
        if (action == "service_start") {
            wf = Workflow{};
            spec = StimulusSpec{};
            cond = ExperimentConditions{};
            cal.reset();
            device = SimDeviceConfig{}.name;
            last_artifact.reset();
            last_recording.reset();
        } else if (action == "select_device") {
            device = e.at("device").get<std::string>();
        } else if (action == "calibrate") {
            cal = gain_from_json(e);
            workflow_apply(wf, Command::bind_reference);
        } else if (action == "reset_calibration") {
            cal.reset();
            workflow_apply(wf, Command::reset_calibration);
        } else if (action == "set_spec") {
            spec = spec_from_json(e.at("spec"));
        } else if (action == "update_settings") {
            cond = conditions_from_json(e.at("conditions"), std::numeric_limits<std::size_t>::max());
            spec = apply_conditions(spec, cond);
        } else if (action == "save_test_signal") {
            sidecar_of(e);
            last_artifact = e.at("artifact").get<std::string>();
        } else if (action == "save_memo") {
            sidecar_of(e);
            last_artifact = e.at("artifact").get<std::string>();
        } else if (action == "save_recording") {
            const json side = sidecar_of(e);
            if (spec_from_json(side.at("spec")) != spec_from_json(e.at("spec")))
                throw Error(Errc::validation_error, "sidecar spec differs from the log");
            last_artifact = last_recording = e.at("artifact").get<std::string>();
            workflow_apply(wf, Command::save);
        } else if (action == "test_complete" || action == "playback_complete") {
            workflow_complete(wf);
        } else if (const auto c = command_from(action)) {
            workflow_apply(wf, *c);
        } else {
            throw Error(Errc::parse_error, "unknown log action " + action);
        }
    }
    return state_json(wf, spec, cal, cond, device, last_artifact, last_recording);
}

} // namespace foresp
