#include "foresp/error.hpp"
#include "foresp/service.hpp"

#include <catch_amalgamated.hpp>

#include <chrono>
#include <deque>
#include <fstream>
#include <set>
#include <thread>

#include <unistd.h>

using namespace foresp;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir()
    {
        static int n = 0;
        path = fs::temp_directory_path() / ("foresp_service_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ServiceConfig fast_config(const fs::path& root)
{
    ServiceConfig c;
    c.root = root;
    c.speed = 0.0; // lockstep clock
    return c;
}

json call(Service& s, const std::string& cmd, json params = json::object())
{
    static int id = 0;
    return s.handle_message({{"id", ++id}, {"cmd", cmd}, {"params", std::move(params)}});
}

std::string error_code(const json& reply)
{
    return reply.at("ok").get<bool>() ? std::string() : reply.at("error").at("code").get<std::string>();
}

std::size_t experimenter_lines(const fs::path& root)
{
    std::size_t n = 0;
    for (const auto& e : read_log(root / "log.jsonl"))
        n += e.at("actor") == "experimenter";
    return n;
}

void calibrate(Service& s, int reference = 70)
{
    REQUIRE(call(s, "calib_start").at("ok"));
    const auto t0 = std::chrono::steady_clock::now();
    json r;
    do {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        r = call(s, "bind_reference", {{"reference", reference}});
    } while (!r.at("ok").get<bool>() && error_code(r) == "unstable-level" &&
             std::chrono::steady_clock::now() - t0 < std::chrono::seconds(30));
    REQUIRE(r.at("ok"));
    REQUIRE(call(s, "calib_stop").at("ok"));
}

// Oracle state kept beside the machine: facts the invariants talk about,
// tracked only from which commands were accepted.
struct Facts {
    bool calibrated = false;
    bool recorded = false;     // a finished test is held
    bool saved_current = false;
    bool operator<(const Facts& o) const
    {
        return std::tie(calibrated, recorded, saved_current) < std::tie(o.calibrated, o.recorded, o.saved_current);
    }
};

struct Node {
    Workflow wf;
    Facts facts;
    bool operator<(const Node& o) const
    {
        auto key = [](const Node& n) {
            return std::make_tuple(static_cast<int>(n.wf.phase), static_cast<int>(n.wf.activity),
                                   static_cast<int>(n.wf.resume), n.facts.calibrated, n.facts.recorded,
                                   n.facts.saved_current);
        };
        return key(*this) < key(o);
    }
};

} // namespace

TEST_CASE("workflow: no command sequence of length six breaks the invariants")
{
    // Steps are the 19 commands plus the environment finishing a running
    // activity. Every sequence is covered because acceptance depends only on
    // the node, so a breadth-first walk with memoization is exhaustive.
    std::set<Node> seen{Node{}};
    std::vector<Node> frontier{Node{}};
    std::size_t transitions = 0;
    for (int depth = 0; depth < 6; ++depth) {
        std::vector<Node> next;
        for (const Node& n : frontier) {
            for (int step = 0; step <= kCommandCount; ++step) {
                Node m = n;
                if (step == kCommandCount) {
                    if (m.wf.activity != Activity::testing && m.wf.activity != Activity::playback)
                        continue;
                    if (m.wf.activity == Activity::testing)
                        m.facts = {m.facts.calibrated, true, false};
                    workflow_complete(m.wf);
                } else {
                    const auto c = static_cast<Command>(step);
                    const Gate g = workflow_check(m.wf, c);
                    if (!g.ok)
                        continue;
                    // the two safety properties
                    if (c == Command::test_start)
                        REQUIRE(m.facts.calibrated);
                    if (c == Command::get_analysis)
                        REQUIRE(m.facts.saved_current);
                    if (c == Command::save)
                        REQUIRE(m.facts.recorded);
                    if (c == Command::play)
                        REQUIRE(m.facts.recorded);
                    workflow_apply(m.wf, c);
                    if (c == Command::test_start)
                        m.facts.recorded = m.facts.saved_current = false;
                    if (c == Command::bind_reference)
                        m.facts.calibrated = true;
                    if (c == Command::reset_calibration)
                        m.facts.calibrated = false;
                    if (c == Command::save)
                        m.facts.saved_current = true;
                }
                ++transitions;
                // state invariants
                if (m.wf.phase == Phase::testing)
                    REQUIRE(m.facts.calibrated);
                if (m.wf.phase == Phase::saved)
                    REQUIRE(m.facts.saved_current);
                if (m.wf.activity == Activity::testing)
                    REQUIRE(m.wf.phase == Phase::testing);
                if (seen.insert(m).second)
                    next.push_back(m);
            }
        }
        frontier = std::move(next);
    }
    // the walk is not vacuous: every phase is reached
    std::set<Phase> phases;
    for (const auto& n : seen)
        phases.insert(n.wf.phase);
    CHECK(phases.size() == 6);
    CHECK(transitions > seen.size());
}

TEST_CASE("workflow gates")
{
    Workflow w;
    CHECK(workflow_check(w, Command::test_start).reason == "uncalibrated");
    CHECK(workflow_check(w, Command::get_analysis).reason == "not-saved");
    CHECK_FALSE(workflow_check(w, Command::bind_reference).ok); // meter not running
    workflow_apply(w, Command::calib_start);
    CHECK(workflow_check(w, Command::bind_reference).ok);
    CHECK(workflow_check(w, Command::test_start).code == Errc::engine_busy);
    workflow_apply(w, Command::bind_reference);
    CHECK(workflow_check(w, Command::bind_reference).code == Errc::already_calibrated);
    workflow_apply(w, Command::calib_stop);
    CHECK(workflow_check(w, Command::test_start).ok);
    CHECK_FALSE(workflow_check(w, Command::save).ok);
    CHECK_FALSE(workflow_check(w, Command::play).ok);
    for (int i = 0; i < kCommandCount; ++i) {
        const auto c = static_cast<Command>(i);
        CHECK(command_from(to_string(c)) == c);
    }
    CHECK_FALSE(command_from("launch"));
    CHECK(phase_from("recorded") == Phase::recorded);
}

TEST_CASE("condition menus constrain the spec")
{
    ExperimentConditions c;
    c.fo_choices = {220.0, 440.0};
    c.target_fo_choices = {220.0};
    c.depth = 50.0;
    c.combination_ids = {4, 5};
    StimulusSpec s;
    s.fo = 440.0;
    const auto out = apply_conditions(s, c);
    CHECK(out.fo == 440.0);
    CHECK(out.target_fo == 220.0);
    CHECK(out.depth == 50.0);
    CHECK(out.combination_id == 4);
}

TEST_CASE("service session end to end")
{
    TempDir d;
    Service svc(fast_config(d.path));
    std::vector<json> events;
    std::mutex ev_mu;
    svc.subscribe([&](const json& e) {
        std::lock_guard lock(ev_mu);
        events.push_back(e);
    });

    SECTION("malformed and unknown messages")
    {
        CHECK(error_code(call(svc, "launch")) == "unknown-command");
        CHECK(error_code(svc.handle_message(json::array())) == "bad-message");
        const auto r = json::parse(svc.handle_text("{nope"));
        CHECK(r.at("error").at("code") == "bad-message");
        const auto echo = svc.handle_message({{"id", "abc"}, {"cmd", "get_state"}});
        CHECK(echo.at("id") == "abc");
        CHECK(echo.at("payload").at("phase") == "uncalibrated");
    }

    SECTION("the procedure order is enforced")
    {
        const auto t = call(svc, "test_start");
        CHECK(error_code(t) == "invalid-state");
        CHECK(t.at("error").at("reason") == "uncalibrated");
        const auto a = call(svc, "get_analysis");
        CHECK(error_code(a) == "invalid-state");
        CHECK(a.at("error").at("reason") == "not-saved");
        CHECK(error_code(call(svc, "get_analysis", {{"artifact", "20210601T000000000_rec"}})) == "invalid-state");
        CHECK(error_code(call(svc, "save")) == "invalid-state");
        CHECK(error_code(call(svc, "bind_reference", {{"reference", 70}})) == "invalid-state");
        CHECK(error_code(call(svc, "select_device", {{"name", "Missing"}})) == "device-unavailable");
    }

    SECTION("calibrate, test, save, analyse, memo, replay")
    {
        const fs::path root = d.path;
        calibrate(svc);
        const auto log = read_log(root / "log.jsonl");
        const auto cal_line = std::find_if(log.begin(), log.end(), [](const json& e) { return e.at("action") == "calibrate"; });
        REQUIRE(cal_line != log.end());
        CHECK(cal_line->at("reference") == 70);
        CHECK(svc.workflow().phase == Phase::calibrated);

        REQUIRE(call(svc, "set_spec", {{"duration", 12.0}, {"fo", 220.0}, {"target_fo", 220.0}}).at("ok"));
        REQUIRE(call(svc, "test_start").at("ok"));
        REQUIRE(svc.wait_idle());
        CHECK(svc.workflow().phase == Phase::recorded);
        CHECK(error_code(call(svc, "get_analysis")) == "invalid-state");

        const auto saved = call(svc, "save");
        REQUIRE(saved.at("ok"));
        const std::string id = saved.at("payload").at("artifact");
        const auto an = call(svc, "get_analysis", {{"artifact", id}});
        REQUIRE(an.at("ok"));
        CHECK(an.at("payload").at("linear").size() == 90);
        CHECK(an.at("payload").at("diagnostics").at("level_is_spl") == true);
        CHECK(call(svc, "get_analysis").at("payload") == an.at("payload"));
        CHECK(error_code(call(svc, "save")) == "invalid-state");

        const auto memo = call(svc, "memo5s");
        REQUIRE(memo.at("ok"));
        CHECK(memo.at("payload").at("samples") == 220500);
        const auto art = svc.store().artifact(memo.at("payload").at("artifact"));
        REQUIRE(art);
        CHECK(fs::exists(art->wav));

        REQUIRE(call(svc, "play").at("ok"));
        REQUIRE(svc.wait_idle());
        CHECK(svc.workflow().phase == Phase::saved);

        REQUIRE(call(svc, "save_test_signal").at("ok"));
        CHECK(replay_state(root) == svc.snapshot());

        std::lock_guard lock(ev_mu);
        std::set<std::string> names;
        std::uint64_t last = 0;
        for (const auto& e : events) {
            CHECK(e.at("seq").get<std::uint64_t>() > last);
            last = e.at("seq");
            names.insert(e.at("event"));
        }
        for (const char* n : {"meter", "elapsed", "test_complete", "analysis_ready", "memo_saved"})
            CHECK(names.count(n) == 1);
    }

    SECTION("voice check streams pitch frames near the target")
    {
        calibrate(svc);
        REQUIRE(call(svc, "voice_check_start").at("ok"));
        const auto t0 = std::chrono::steady_clock::now();
        std::size_t voiced = 0;
        while (voiced < 20 && std::chrono::steady_clock::now() - t0 < std::chrono::seconds(20)) {
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
            std::lock_guard lock(ev_mu);
            voiced = 0;
            for (const auto& e : events)
                if (e.at("event") == "pitch" && e.at("data").at("voiced") == true) {
                    ++voiced;
                    CHECK(std::abs(e.at("data").at("cents").get<double>()) < 5.0);
                }
        }
        CHECK(voiced >= 20);
        REQUIRE(call(svc, "voice_check_stop").at("ok"));
        CHECK(svc.workflow().phase == Phase::calibrated);
    }
}

TEST_CASE("each state-changing command writes exactly one log entry")
{
    TempDir d;
    auto cfg = fast_config(d.path);
    cfg.speed = 4.0; // slow enough to abort a test
    Service svc(cfg);
    const fs::path cond = d.path / "cond.json";
    std::ofstream(cond) << R"({"schema_version":1,"fo_choices":[110,220],"target_fo_choices":[110],"depth":80})";

    auto step = [&](const std::string& cmd, json params = json::object()) {
        const auto before = experimenter_lines(d.path);
        const auto r = call(svc, cmd, params);
        const auto after = experimenter_lines(d.path);
        const auto c = command_from(cmd);
        INFO(cmd << " -> " << r.dump());
        if (r.at("ok") && c && changes_state(*c))
            CHECK(after == before + 1);
        else
            CHECK(after == before);
        return r;
    };

    step("list_devices");
    step("get_state");
    step("test_start"); // refused
    step("select_device", {{"name", "Simulated duplex"}});
    step("update_settings", {{"path", cond.string()}});
    CHECK(svc.snapshot().at("spec").at("depth") == 80.0);
    step("set_spec", {{"duration", 12.0}, {"combination_id", 3}});
    step("set_spec", {{"fo", 1500.0}, {"signal_type", "SINES"}}); // refused: Nyquist
    step("save_test_signal");
    step("calib_start");
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    json r;
    for (int i = 0; i < 100; ++i) {
        r = step("bind_reference", {{"reference", 80}});
        if (r.at("ok"))
            break;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    REQUIRE(r.at("ok"));
    step("calib_stop");
    step("reset_calibration");
    step("calib_start");
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    for (int i = 0; i < 100; ++i) {
        r = step("bind_reference", {{"reference", 70}});
        if (r.at("ok"))
            break;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    REQUIRE(r.at("ok"));
    step("stop");
    step("voice_check_start");
    step("voice_check_stop");
    step("test_start");
    CHECK(error_code(step("memo5s")) == "engine-busy");
    step("test_stop");
    CHECK(svc.workflow().phase == Phase::calibrated);
    step("test_start");
    REQUIRE(svc.wait_idle());
    step("save");
    step("get_analysis");
    step("memo5s");
    REQUIRE(svc.wait_idle());
    CHECK(replay_state(d.path) == svc.snapshot());
}
