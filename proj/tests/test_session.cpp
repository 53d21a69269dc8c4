#include "foresp/error.hpp"
#include "foresp/session.hpp"
#include "foresp/sim_subject.hpp"
#include "foresp/wav.hpp"

#include <catch_amalgamated.hpp>

#include <fstream>

#include <unistd.h>

using namespace foresp;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

Errc code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return Errc::bad_message;
}

Clock::time_point june_first()
{
    using namespace std::chrono;
    return sys_days{year{2021} / 6 / 1} + hours{12} + minutes{34} + seconds{56} + milliseconds{789};
}

// fresh directory per test, removed afterwards
struct TempDir {
    fs::path path;
    TempDir()
    {
        static int n = 0;
        path = fs::temp_directory_path() /
               ("foresp_session_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

const TestSignal& short_signal()
{
    static const TestSignal t = [] {
        StimulusSpec s;
        s.duration = 12.0;
        s.fo = 220.0;
        s.target_fo = 220.0;
        return make_test_signal(s, default_catalog());
    }();
    return t;
}

} // namespace

TEST_CASE("time-stamped names")
{
    CHECK(format_unique_name(june_first(), "rec") == "20210601T123456789_rec");
    CHECK(format_unique_name(june_first(), "a b/../c!") == "20210601T123456789_abc");
    CHECK(format_unique_name(june_first(), "x-y_z") == "20210601T123456789_x-y_z");
    CHECK(format_unique_name(june_first(), "//") == "20210601T123456789_artifact");
    CHECK(iso8601(june_first()) == "2021-06-01T12:34:56.789Z");

    TempDir d;
    SessionStore store(d.path, june_first);
    CHECK(store.unique_name("rec") == "20210601T123456789_rec");
    CHECK(store.unique_name("rec") == "20210601T123456789_rec_1");
    CHECK(store.unique_name("rec") == "20210601T123456789_rec_2");
    CHECK(store.unique_name("memo") == "20210601T123456789_memo");
}

TEST_CASE("names already on disk are not reused")
{
    TempDir d;
    {
        SessionStore a(d.path, june_first);
        const std::vector<double> v(100, 0.1);
        CHECK(a.save_memo(v, 44100.0) == "20210601T123456789_memo");
    }
    SessionStore b(d.path, june_first);
    CHECK(b.unique_name("memo") == "20210601T123456789_memo_1");
}

TEST_CASE("condition files")
{
    TempDir d;
    const auto good = d.path / "good.json";
    write_file(good, R"({"schema_version":1,"fo_choices":[110,220],"depth":100,"combination_ids":[0,3],
                        "defaults":{"signal_type":"SINE"}})");
    const auto c = load_condition_file(good, 20);
    CHECK(c.fo_choices == std::vector<double>{110, 220});
    CHECK(c.depth == 100.0);
    CHECK(c.combination_ids == std::vector<int>{0, 3});
    CHECK(c.default_type == SignalType::SINE);
    CHECK(conditions_from_json(conditions_to_json(c), 20) == c);

    auto bad = [&](const std::string& text) {
        const auto p = d.path / "bad.json";
        write_file(p, text);
        return code_of([&] { load_condition_file(p, 20); });
    };
    CHECK(bad(R"({"schema_version":1,"fo_choices":[-5]})") == Errc::validation_error);
    CHECK(bad(R"({"schema_version":1,"combination_ids":[20]})") == Errc::validation_error);
    CHECK(bad(R"({"schema_version":1,"depth":-1})") == Errc::validation_error);
    CHECK(bad(R"({"schema_version":2})") == Errc::validation_error);
    CHECK(bad(R"({"fo_choices":[110]})") == Errc::validation_error);
    CHECK(bad(R"({"schema_version":1,"defaults":{"signal_type":"NOISE"}})") == Errc::validation_error);
    CHECK(bad("{not json") == Errc::parse_error);
    CHECK(code_of([&] { load_condition_file(d.path / "missing.json", 20); }) == Errc::parse_error);

    SessionStore store(d.path, june_first);
    const auto before = store.log_lines();
    store.load_conditions(good, 20);
    CHECK(store.log_lines() == before + 1);
    CHECK(fs::exists(d.path / "conditions.json"));
    CHECK(read_log(store.log_path()).back().at("action") == "update_settings");
}

TEST_CASE("test signal sidecar round-trips the spec")
{
    TempDir d;
    SessionStore store(d.path, june_first);
    const auto cal = bind_reference(-30.0, 70, iso8601(june_first()));
    const auto id = store.save_test_signal(short_signal(), cal);
    const auto art = store.artifact(id);
    REQUIRE(art);
    CHECK(art->kind == ArtifactKind::test_signal);
    CHECK(art->wav.parent_path().filename() == "testsignals");
    std::ifstream f(art->sidecar);
    const auto side = json::parse(f);
    CHECK(spec_from_json(side.at("spec")) == short_signal().spec);
    CHECK(gain_from_json(side.at("calibration")) == cal);
    CHECK(side.at("id") == id);
    const auto w = read_wav(art->wav);
    CHECK(w.comment == id);
    REQUIRE(w.channels.size() == 1);
    CHECK(w.channels[0].size() == short_signal().samples.size());
    CHECK(std::abs(w.channels[0][1000] - short_signal().samples[1000]) <= 1.0 / (1 << 23));
}

TEST_CASE("analysis is released only after saving")
{
    TempDir d;
    SessionStore store(d.path, june_first);
    const auto& t = short_signal();
    SubjectModel m;
    m.base_fo = 220.0;
    RecordingPair rec;
    rec.voice = simulate_subject(t, m, 0.0);
    rec.loopback = t.samples;
    rec.spec = t.spec;

    CHECK(code_of([&] { store.analysis("20210601T123456789_rec"); }) == Errc::not_saved);
    CHECK(code_of([&] { store.analyze_saved("20210601T123456789_rec", default_catalog()); }) == Errc::not_saved);
    const auto id = store.save_recording(rec);
    CHECK(store.is_saved(id));
    CHECK(code_of([&] { store.analysis(id); }) == Errc::not_saved);
    const auto res = store.analyze_saved(id, default_catalog());
    CHECK(store.analysis(id) == res);
    CHECK_FALSE(res.contains("error"));
    CHECK(res.at("artifact") == id);
    CHECK(fs::exists(d.path / "results" / (id + ".json")));
    CHECK(fs::exists(d.path / "results" / (id + ".csv")));

    const auto loaded = load_recording(store.artifact(id)->wav);
    CHECK(loaded.pair.spec == t.spec);
    CHECK(loaded.pair.voice.size() == rec.voice.size());
    CHECK(std::abs(loaded.pair.loopback[5000] - rec.loopback[5000]) <= 1.0 / (1 << 23));

    // empty recordings are not saved
    CHECK(code_of([&] { store.save_recording(RecordingPair{}); }) == Errc::nothing_to_save);
    CHECK(code_of([&] { store.save_memo(std::vector<double>{}, 44100.0); }) == Errc::nothing_to_save);
}

TEST_CASE("analyzer failures are stored as the result")
{
    TempDir d;
    SessionStore store(d.path, june_first);
    const auto& t = short_signal();
    RecordingPair rec;
    rec.voice.assign(t.samples.size(), 0.0);
    rec.loopback = t.samples;
    rec.spec = t.spec;
    const auto id = store.save_recording(rec);
    const auto res = store.analyze_saved(id, default_catalog());
    CHECK(res.at("error").at("code") == "insufficient-voicing");
    CHECK(store.analysis(id) == res);
}

TEST_CASE("the action log is append-only JSON lines")
{
    TempDir d;
    SessionStore store(d.path, june_first);
    std::size_t last = store.log_lines();
    const auto g = bind_reference(-30.0, 70, iso8601(june_first()));
    const auto line = store.log_action("experimenter", "calibrate", {{"reference", 70}, {"offset_db", g.offset_db}});
    CHECK(line.at("action") == "calibrate");
    CHECK(line.at("reference") == 70);
    CHECK(line.at("time") == "2021-06-01T12:34:56.789Z");
    CHECK(store.log_lines() > last);
    last = store.log_lines();

    // reserved keys in the payload do not override the envelope
    store.log_action("experimenter", "note", {{"action", "forged"}, {"text", "x"}});
    CHECK(store.log_lines() > last);
    last = store.log_lines();

    const std::vector<double> v(220500, 0.05);
    const auto id = store.save_memo(v, 44100.0);
    CHECK(store.log_lines() > last);

    std::ifstream f(store.log_path());
    std::string first;
    std::getline(f, first);
    const auto lines = read_log(store.log_path());
    REQUIRE(lines.size() == 3);
    CHECK(lines[0].dump() == first);
    CHECK(lines[1].at("action") == "note");
    CHECK(lines[2].at("action") == "save_memo");
    CHECK(lines[2].at("artifact") == id);
    CHECK(lines[2].at("samples") == 220500);

    // a second store on the same root continues the count
    SessionStore again(d.path, june_first);
    CHECK(again.log_lines() == 3);
}

TEST_CASE("storage root override")
{
    ::unsetenv(kRootEnvVar);
    CHECK(storage_root("/fallback") == "/fallback");
    ::setenv(kRootEnvVar, "/tmp/elsewhere", 1);
    CHECK(storage_root("/fallback") == "/tmp/elsewhere");
    ::unsetenv(kRootEnvVar);
}
