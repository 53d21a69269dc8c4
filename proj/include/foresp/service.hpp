#pragma once

#include "foresp/calibration.hpp"
#include "foresp/error.hpp"
#include "foresp/fo_tracker.hpp"
#include "foresp/rt_engine.hpp"
#include "foresp/session.hpp"
#include "foresp/sim_subject.hpp"
#include "foresp/stimulus.hpp"

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

namespace foresp {

enum class Phase { uncalibrated, calibrated, voice_check, testing, recorded, saved };
enum class Activity { none, calibration, voice_check, testing, playback, memo };

enum class Command {
    list_devices,
    select_device,
    calib_start,
    calib_stop,
    bind_reference,
    reset_calibration,
    set_spec,
    save_test_signal,
    update_settings,
    voice_check_start,
    voice_check_stop,
    test_start,
    test_stop,
    play,
    stop,
    save,
    memo5s,
    get_analysis,
    get_state,
};
inline constexpr int kCommandCount = 19;

const char* to_string(Phase p);
const char* to_string(Activity a);
const char* to_string(Command c);
Phase phase_from(const std::string& s);
std::optional<Command> command_from(const std::string& s);

// The workflow rules as a pure machine. The service gates every command
// through it, and the model checker enumerates it.
struct Workflow {
    Phase phase = Phase::uncalibrated;
    Activity activity = Activity::none;
    Phase resume = Phase::uncalibrated; // phase to return to after voice check / aborted test
    bool operator==(const Workflow&) const = default;
};

struct Gate {
    bool ok = true;
    Errc code = Errc::invalid_state;
    std::string reason;
};

Gate workflow_check(const Workflow& w, Command c);
// Effect of an accepted command.
void workflow_apply(Workflow& w, Command c);
// Effect of a finite activity running to its end.
void workflow_complete(Workflow& w);
// Whether a successful command changes persistent or activity state.
bool changes_state(Command c);

// Menu update: depth from the file; f_o, target and combination fall back
// to the first menu entry when no longer offered.
StimulusSpec apply_conditions(StimulusSpec spec, const ExperimentConditions& c);

struct ServiceConfig {
    std::filesystem::path root = "foresp-data";
    double speed = 1.0;               // simulated device clock re real time, <= 0 lockstep
    std::size_t loopback_latency = 0; // samples
    SubjectModel subject = smoothed_pulse_model(110.0, 0.15, 0.08);
    double onset = 1.0;               // simulated voicing onset, seconds
    double coupling_db = -6.0;        // simulated calibration path gain
    bool run_ticker = true;
    std::function<Clock::time_point()> clock = Clock::now;
    const CombinationCatalog* catalog = nullptr; // default_catalog() when null
};

class Service {
public:
    using EventSink = std::function<void(const nlohmann::json&)>;

    explicit Service(ServiceConfig cfg = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // {id, cmd, params} -> {id, ok, payload | error}
    nlohmann::json handle_message(const nlohmann::json& msg);
    std::string handle_text(const std::string& text);

    int subscribe(EventSink sink);
    void unsubscribe(int token);

    // Replayable state: phase, spec, calibration, conditions, device,
    // last artifacts.
    nlohmann::json snapshot() const;
    Workflow workflow() const;
    SessionStore& store() { return store_; }
    const ServiceConfig& config() const { return cfg_; }

    // Handles pending ticker work immediately (meter, pitch, completion).
    void poll();
    // Waits until a finite activity has finished and been handled.
    bool wait_idle(double timeout_s = 120.0);
    std::size_t meter_readings() const;

private:
    class SimInjector;

    nlohmann::json dispatch(Command c, const nlohmann::json& params);
    void start_activity(Activity a, std::size_t n_samples);
    void stop_activity();
    void poll_locked();
    void finish_activity(const LoopReport& rep);
    void process_meter();
    void process_pitch();
    void emit(const std::string& name, nlohmann::json data);
    void ticker_loop();
    nlohmann::json get_analysis(const nlohmann::json& params, std::unique_lock<std::mutex>& lock);

    ServiceConfig cfg_;
    const CombinationCatalog& catalog_;
    SessionStore store_;

    mutable std::mutex mu_; // control state
    Workflow wf_;
    StimulusSpec spec_;
    ExperimentConditions conditions_;
    Calibrator calibrator_;
    std::string device_name_;
    std::optional<std::string> last_artifact_, last_recording_;
    std::optional<RecordingPair> pending_;
    nlohmann::json pending_extra_;

    std::shared_ptr<SimulatedDevice> device_;
    std::shared_ptr<SimInjector> injector_;
    std::unique_ptr<AudioEngine> engine_;
    std::shared_ptr<const std::vector<float>> out_buf_;
    std::unique_ptr<BufferSource> source_;
    std::unique_ptr<StereoCapture> capture_;
    std::unique_ptr<SampleRing> ring_;
    std::unique_ptr<RingSink> ring_sink_;
    std::unique_ptr<LivePitchMonitor> monitor_;
    std::atomic<bool> done_{false};
    std::uint64_t processed_ = 0; // ring position handled by the ticker
    int last_second_ = 0;

    std::map<std::string, std::shared_future<void>> analyses_;

    std::mutex ev_mu_;
    std::map<int, EventSink> sinks_;
    int next_token_ = 1;
    std::uint64_t seq_ = 0;

    std::atomic<bool> quit_{false};
    std::condition_variable_any idle_cv_;
    std::thread ticker_;
};

// Rebuilds the replayable state from <root>/log.jsonl and the sidecars it
// references. The result compares equal to Service::snapshot() of the
// service that wrote the log.
nlohmann::json replay_state(const std::filesystem::path& root);

} // namespace foresp
