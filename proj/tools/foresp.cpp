// foresp command line: offline generation and analysis, simulation, the
// control service, a self test on the simulated device, and log replay.

#include "foresp/analyzer.hpp"
#include "foresp/capricep.hpp"
#include "foresp/error.hpp"
#include "foresp/fft.hpp"
#include "foresp/rt_engine.hpp"
#include "foresp/service.hpp"
#include "foresp/session.hpp"
#include "foresp/sim_subject.hpp"
#include "foresp/stimulus.hpp"
#include "foresp/ws_server.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <pthread.h>

using namespace foresp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json_file(const fs::path& p)
{
    std::ifstream f(p);
    if (!f)
        throw Error(Errc::parse_error, "cannot open " + p.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw Error(Errc::parse_error, p.string() + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& text)
{
    std::ofstream f(p, std::ios::binary);
    if (!f || !(f << text))
        throw Error(Errc::storage_failure, "cannot write " + p.string());
}

struct SpecFlags {
    std::string spec_file, type, norm, phase, presentation;
    std::optional<double> fo, target_fo, depth, duration, period;
    std::optional<int> comb;
    std::optional<std::uint64_t> seed;

    void add(CLI::App* app)
    {
        app->add_option("--spec", spec_file, "stimulus spec JSON (flags override it)");
        app->add_option("--type", type, "SINE | SINES | MFND | MFNDH");
        app->add_option("--fo", fo, "test signal f_o, Hz");
        app->add_option("--target-fo", target_fo, "target f_o, Hz");
        app->add_option("--norm", norm, "PEAK | TOTAL_RMS | COMPONENT");
        app->add_option("--phase", phase, "SIN | COS | ALT | SCH");
        app->add_option("--comb", comb, "combination id");
        app->add_option("--depth", depth, "modulation depth, cents");
        app->add_option("--duration", duration, "seconds");
        app->add_option("--period", period, "code period T0, seconds");
        app->add_option("--seed", seed, "mixture seed");
        app->add_option("--presentation", presentation, "headphone | loudspeaker (metadata)");
    }

    StimulusSpec build() const
    {
        StimulusSpec base;
        if (!spec_file.empty())
            base = spec_from_json(read_json_file(spec_file));
        json j = json::object();
        if (!type.empty()) j["signal_type"] = type;
        if (!norm.empty()) j["normalization"] = norm;
        if (!phase.empty()) j["phase_alloc"] = phase;
        if (!presentation.empty()) j["presentation"] = presentation;
        if (fo) j["fo"] = *fo;
        if (target_fo) j["target_fo"] = *target_fo;
        if (depth) j["depth"] = *depth;
        if (duration) j["duration"] = *duration;
        if (period) j["period"] = *period;
        if (comb) j["combination_id"] = *comb;
        if (seed) j["seed"] = *seed;
        StimulusSpec s = spec_from_json(j, base);
        validate_spec(s);
        return s;
    }
};

CombinationCatalog load_catalog(const std::string& path)
{
    return path.empty() ? default_catalog() : catalog_from_json(read_json_file(path));
}

int cmd_gen(const SpecFlags& flags, const std::string& out, const std::string& catalog_path)
{
    const StimulusSpec spec = flags.build();
    const auto catalog = load_catalog(catalog_path);
    const TestSignal sig = make_test_signal(spec, catalog);
    const std::string id = format_unique_name(Clock::now(), "testsignal");
    write_test_signal(out, sig, id, std::nullopt, iso8601(Clock::now()));
    std::printf("wrote %s (%zu samples)\npeak %.6f\ncrest factor %.3f\nid %s\n", out.c_str(), sig.samples.size(),
                peak_abs(sig.samples), crest_factor(sig.samples), id.c_str());
    return 0;
}

int cmd_simulate(const SpecFlags& flags, const std::string& model_path, double onset, std::optional<double> jitter,
                 const std::string& out, const std::string& catalog_path)
{
    const StimulusSpec spec = flags.build();
    const auto catalog = load_catalog(catalog_path);
    SubjectModel m = model_path.empty() ? smoothed_pulse_model(spec.target_fo, 0.15, 0.08)
                                        : model_from_json(read_json_file(model_path));
    if (jitter)
        m.jitter_rms = *jitter;
    const TestSignal sig = make_test_signal(spec, catalog);
    RecordingPair rec;
    rec.voice = simulate_subject(sig, m, onset);
    rec.loopback = sig.samples;
    rec.fs = spec.fs;
    rec.spec = spec;
    const std::string id = format_unique_name(Clock::now(), "sim");
    write_recording(out, rec, id, iso8601(Clock::now()),
                    {{"simulated", true}, {"subject_model", model_to_json(m)}, {"onset", onset}});
    std::printf("wrote %s (%zu samples, voice onset %.2f s)\nid %s\n", out.c_str(), rec.voice.size(), onset,
                id.c_str());
    return 0;
}

int cmd_analyze(const std::string& wav, std::string out_json, std::string out_csv, bool whiten,
                const std::string& catalog_path)
{
    const auto loaded = load_recording(wav);
    const auto catalog = load_catalog(catalog_path);
    AnalyzerOptions opt;
    opt.whiten = whiten;
    const AnalysisResult r = analyze_recording(loaded.pair, catalog, opt);
    const fs::path base = fs::path(wav).replace_extension("");
    if (out_json.empty())
        out_json = base.string() + "_result.json";
    if (out_csv.empty())
        out_csv = base.string() + "_result.csv";
    write_text(out_json, result_to_json(r).dump(2));
    write_text(out_csv, result_to_csv(r));
    const auto& d = r.diagnostics;
    std::printf("wrote %s and %s\n", out_json.c_str(), out_csv.c_str());
    std::printf("voiced span %.2f-%.2f s, %d periods averaged\n", r.response.voiced_span.start,
                r.response.voiced_span.end, r.response.n_averages);
    std::printf("latency %.4f s\npeak gain %.4f\nvoice level %.1f %s\n", d.latency_estimate, d.peak_gain,
                d.voice_level_db, d.level_is_spl ? "dB SPL" : "dBFS");
    if (loaded.sidecar.contains("subject_model")) {
        const SubjectModel m = model_from_json(loaded.sidecar["subject_model"]);
        const auto oracle = expected_linear(r.response.stimulation, m, d.frame_rate);
        std::printf("correlation %.4f\n", normalized_correlation(r.response.linear, oracle));
    }
    return 0;
}

int cmd_serve(const std::string& address, unsigned short port, const std::string& root, const std::string& www,
              double speed)
{
    // Block the termination signals in every thread, then wait for them here.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    ServiceConfig sc;
    sc.root = root.empty() ? storage_root("foresp-data") : fs::path(root);
    sc.speed = speed;
    Service svc(sc);
    ServerConfig cfg;
    cfg.address = address;
    cfg.port = port;
    cfg.static_root = www;
    WsServer server(svc, cfg);
    server.start();
    std::printf("serving on http://%s:%u/ (messages at ws://%s:%u%s), storage %s\n", address.c_str(), server.port(),
                address.c_str(), server.port(), cfg.ws_path.c_str(), sc.root.c_str());
    std::fflush(stdout);
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
    return 0;
}

// ----------------------------------------------------------- self test

struct Tally {
    int failed = 0;
    void check(const char* name, bool ok, const std::string& detail)
    {
        std::printf("%s %-34s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
        if (!ok)
            ++failed;
    }
};

std::string fmt(const char* f, double a, double b = 0.0)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

int cmd_selftest(const std::string& root_arg)
{
    Tally t;
    const fs::path root = root_arg.empty() ? fs::temp_directory_path() / format_unique_name(Clock::now(), "selftest")
                                           : fs::path(root_arg);

    {
        const auto u = generate_unit_capricep(1);
        const auto X = rfft(u.samples);
        double lo = 1e300, hi = -1e300;
        for (std::size_t k = X.size() / 10; k < X.size() * 9 / 10; ++k) {
            const double db = 20.0 * std::log10(std::abs(X[k]));
            lo = std::min(lo, db);
            hi = std::max(hi, db);
        }
        t.check("capricep flat magnitude", hi - lo <= 1.0, fmt("%.3f dB spread", hi - lo));
    }
    {
        const auto& cat = default_catalog();
        StimulusSpec spec;
        const auto mx = build_mixture(cat, 0, spec.T0(), spec.duration, spec.depth, spec.seed);
        const auto rec = recover_responses(mx.pulse_train, cat, 0, mx.codes, mx.period, mx.n_periods, mx.period / 5);
        double peak = 0.0, noise = 0.0;
        for (double v : rec.linear)
            peak = std::max(peak, std::abs(v));
        for (double v : rec.random_tv)
            noise = std::max(noise, std::abs(v));
        t.check("noiseless recovery", noise <= 0.01 * peak, fmt("random/linear %.1f dB", 20 * std::log10(noise / peak + 1e-300)));
    }
    {
        SimDeviceConfig dc;
        dc.speed = 0.0;
        auto dev = std::make_shared<SimulatedDevice>(dc);
        AudioEngine eng(dev);
        StereoCapture cap(220500);
        eng.start(LoopMode::memo, nullptr, &cap, 220500);
        const auto rep = eng.wait();
        t.check("memo capture length", cap.size() == 220500 && rep.underruns == 0,
                std::to_string(cap.size()) + " samples");
    }
    {
        SimDeviceConfig dc;
        dc.speed = 4.0;
        auto dev = std::make_shared<SimulatedDevice>(dc);
        AudioEngine eng(dev);
        auto data = std::make_shared<const std::vector<float>>(static_cast<std::size_t>(2 * 44100), 0.25f);
        BufferSource src(data, false);
        StereoCapture cap(data->size());
        const auto rep = eng.run_duplex(src, cap, LoopMode::response_test, 2.0);
        bool same = cap.size() == data->size();
        for (std::size_t i = 0; same && i < cap.size(); ++i)
            same = cap.loopback()[i] == (*data)[i];
        t.check("duplex loop at 4x, loop-back exact", same && rep.underruns == 0,
                std::to_string(rep.underruns) + " underruns");
    }
    {
        // every command sequence up to length 4 over the workflow machine
        long bad = 0, total = 0;
        std::vector<Workflow> frontier{Workflow{}};
        for (int depth = 0; depth < 4; ++depth) {
            std::vector<Workflow> next;
            for (const auto& w : frontier)
                for (int c = 0; c <= kCommandCount; ++c) {
                    Workflow v = w;
                    ++total;
                    if (c == kCommandCount) {
                        workflow_complete(v);
                    } else {
                        const auto cmd = static_cast<Command>(c);
                        if (!workflow_check(v, cmd).ok)
                            continue;
                        if ((cmd == Command::get_analysis && v.phase != Phase::saved) ||
                            (cmd == Command::test_start && v.phase == Phase::uncalibrated))
                            ++bad;
                        workflow_apply(v, cmd);
                    }
                    next.push_back(v);
                }
            frontier = std::move(next);
        }
        t.check("workflow safety (length <= 4)", bad == 0, std::to_string(total) + " transitions");
    }
    {
        ServiceConfig sc;
        sc.root = root;
        sc.speed = 20.0;
        Service svc(sc);
        auto call = [&](const char* cmd, json params = json::object()) {
            return svc.handle_message({{"id", 1}, {"cmd", cmd}, {"params", params}});
        };
        bool ok = call("calib_start")["ok"];
        for (int i = 0; i < 400 && svc.meter_readings() < 40; ++i)
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        ok = ok && call("bind_reference", {{"reference", 70}})["ok"];
        ok = ok && call("calib_stop")["ok"];
        ok = ok && call("test_start")["ok"];
        ok = ok && svc.wait_idle();
        const bool refused = !call("get_analysis")["ok"];
        const json saved = call("save");
        ok = ok && saved["ok"];
        const json a = call("get_analysis");
        double corr = 0.0;
        if (a["ok"] && a["payload"].contains("linear")) {
            std::vector<double> lin = a["payload"]["linear"], stim = a["payload"]["stimulation"];
            const double rate = a["payload"]["diagnostics"]["frame_rate"];
            SubjectModel m = sc.subject;
            corr = normalized_correlation(lin, expected_linear(stim, m, rate));
        }
        t.check("service workflow on simulated device", ok && refused && corr >= 0.95,
                fmt("correlation %.4f", corr));
        t.check("log replay", replay_state(root) == svc.snapshot(), root.string());
    }
    std::printf("%s\n", t.failed ? "selftest FAILED" : "selftest passed");
    return t.failed ? 1 : 0;
}

int cmd_replay(const std::string& root, const std::string& compare)
{
    const json state = replay_state(storage_root(root.empty() ? fs::path("foresp-data") : fs::path(root)));
    std::cout << state.dump(2) << "\n";
    if (!compare.empty()) {
        const json other = read_json_file(compare);
        const bool same = other.dump() == state.dump();
        std::printf("%s\n", same ? "identical" : "DIFFERENT");
        return same ? 0 : 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"foresp: involuntary f_o response measurement"};
    app.require_subcommand(1);
    std::string catalog;
    app.add_option("--catalog", catalog, "combination catalog JSON (default built in)");

    SpecFlags gen_flags;
    std::string gen_out = "testsignal.wav";
    auto* gen = app.add_subcommand("gen", "generate a test signal WAV + sidecar");
    gen_flags.add(gen);
    gen->add_option("--out,-o", gen_out, "output WAV");

    std::string an_in, an_json, an_csv;
    bool an_whiten = false;
    auto* an = app.add_subcommand("analyze", "analyze a stereo recording (voice, loop-back)");
    an->add_option("recording", an_in, "recording WAV with sidecar")->required();
    an->add_option("--json", an_json, "result JSON path");
    an->add_option("--csv", an_csv, "result CSV path");
    an->add_flag("--whiten", an_whiten, "undo the pink shaping before recovery");

    SpecFlags sim_flags;
    std::string sim_model, sim_out = "sim_recording.wav";
    double sim_onset = 1.0;
    std::optional<double> sim_jitter;
    auto* sim = app.add_subcommand("simulate", "simulate a subject and write a recording");
    sim_flags.add(sim);
    sim->add_option("--model", sim_model, "subject model JSON (default: 150 ms latency, 80 ms smoothing)");
    sim->add_option("--onset", sim_onset, "voicing onset, seconds");
    sim->add_option("--jitter", sim_jitter, "jitter rms, cents");
    sim->add_option("--out,-o", sim_out, "output WAV");

    std::string sv_addr = "127.0.0.1", sv_root, sv_www;
    unsigned short sv_port = 8765;
    double sv_speed = 1.0;
    auto* sv = app.add_subcommand("serve", "run the control service and UI endpoint");
    sv->add_option("--address", sv_addr, "listen address");
    sv->add_option("--port", sv_port, "listen port (0 = any)");
    sv->add_option("--root", sv_root, std::string("storage root (else $") + kRootEnvVar + " or ./foresp-data)");
    sv->add_option("--static", sv_www, "UI bundle directory");
    sv->add_option("--speed", sv_speed, "simulated device clock re real time");

    std::string st_root;
    auto* st = app.add_subcommand("selftest", "run the invariant suite on the simulated device");
    st->add_option("--root", st_root, "scratch storage root");

    std::string rp_root, rp_compare;
    auto* rp = app.add_subcommand("replay", "rebuild the experiment state from a session log");
    rp->add_option("--root", rp_root, std::string("storage root (else $") + kRootEnvVar + " or ./foresp-data)");
    rp->add_option("--compare", rp_compare, "state JSON to compare against");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen)
            return cmd_gen(gen_flags, gen_out, catalog);
        if (*an)
            return cmd_analyze(an_in, an_json, an_csv, an_whiten, catalog);
        if (*sim)
            return cmd_simulate(sim_flags, sim_model, sim_onset, sim_jitter, sim_out, catalog);
        if (*sv)
            return cmd_serve(sv_addr, sv_port, sv_root, sv_www, sv_speed);
        if (*st)
            return cmd_selftest(st_root);
        if (*rp)
            return cmd_replay(rp_root, rp_compare);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", errc_name(e.code()), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
