#include "foresp/rt_engine.hpp"

#include "foresp/error.hpp"
#include "foresp/fft.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <pthread.h>
#include <sched.h>

namespace foresp {

const char* to_string(LoopMode m)
{
    switch (m) {
    case LoopMode::calibration: return "calibration";
    case LoopMode::voice_check: return "voice_check";
    case LoopMode::response_test: return "response_test";
    case LoopMode::playback: return "playback";
    case LoopMode::memo: return "memo";
    }
    return "?";
}

// ---------------------------------------------------------------- rings

SampleRing::SampleRing(std::size_t capacity) : data_(capacity)
{
    if (capacity == 0)
        throw Error(Errc::invalid_argument, "ring capacity must be positive");
    clear();
}

void SampleRing::clear()
{
    for (auto& v : data_)
        v.store(0.0f, std::memory_order_relaxed);
    announced_.store(0);
    published_.store(0);
}

void SampleRing::write(std::span<const float> x)
{
    const std::uint64_t w = published_.load(std::memory_order_relaxed);
    const std::size_t cap = data_.size();
    announced_.store(w + x.size(), std::memory_order_relaxed);
    std::atomic_thread_fence(std::memory_order_release);
    for (std::size_t i = 0; i < x.size(); ++i)
        data_[(w + i) % cap].store(x[i], std::memory_order_relaxed);
    published_.store(w + x.size(), std::memory_order_release);
}

bool SampleRing::snapshot(std::span<float> out) const
{
    for (int attempt = 0; attempt < 4; ++attempt) {
        const std::uint64_t w = published_.load(std::memory_order_acquire);
        if (snapshot_at(w, out))
            return true;
        if (w < out.size())
            return false;
    }
    return false;
}

bool SampleRing::snapshot_at(std::uint64_t end, std::span<float> out) const
{
    const std::size_t n = out.size();
    const std::size_t cap = data_.size();
    if (n > cap || end < n || end > published_.load(std::memory_order_acquire))
        return false;
    const std::uint64_t start = end - n;
    for (std::size_t i = 0; i < n; ++i)
        out[i] = data_[(start + i) % cap].load(std::memory_order_relaxed);
    std::atomic_thread_fence(std::memory_order_acquire);
    // torn or stale if the writer announced data past start + cap
    return announced_.load(std::memory_order_relaxed) <= start + cap;
}

BlockQueue::BlockQueue(std::size_t slots, std::size_t block, std::size_t channels)
    : slots_(slots), block_(block), channels_(channels), data_(slots * block * channels, 0.0f)
{
}

namespace {
// One wake counter per queue pair would do; a shared one keeps it simple.
std::atomic<std::uint64_t>& signal_word()
{
    static std::atomic<std::uint64_t> s{0};
    return s;
}
void signal_all()
{
    signal_word().fetch_add(1, std::memory_order_release);
    signal_word().notify_all();
}
} // namespace

std::size_t BlockQueue::size() const
{
    return static_cast<std::size_t>(tail_.load(std::memory_order_acquire) - head_.load(std::memory_order_acquire));
}

bool BlockQueue::try_push(std::span<const std::span<const float>> chans)
{
    const std::uint64_t t = tail_.load(std::memory_order_relaxed);
    if (t - head_.load(std::memory_order_acquire) >= slots_)
        return false;
    float* dst = data_.data() + (t % slots_) * block_ * channels_;
    for (std::size_t c = 0; c < channels_; ++c) {
        const auto& src = chans[c];
        std::copy_n(src.data(), std::min(block_, src.size()), dst + c * block_);
    }
    tail_.store(t + 1, std::memory_order_release);
    signal_all();
    return true;
}

bool BlockQueue::try_pop(std::span<const std::span<float>> chans)
{
    const std::uint64_t h = head_.load(std::memory_order_relaxed);
    if (tail_.load(std::memory_order_acquire) == h)
        return false;
    const float* src = data_.data() + (h % slots_) * block_ * channels_;
    for (std::size_t c = 0; c < channels_ && c < chans.size(); ++c)
        std::copy_n(src + c * block_, std::min(block_, chans[c].size()), chans[c].data());
    head_.store(h + 1, std::memory_order_release);
    signal_all();
    return true;
}

bool BlockQueue::wait_readable(const std::atomic<bool>& abort) const
{
    for (;;) {
        const std::uint64_t s = signal_word().load(std::memory_order_acquire);
        if (size() > 0)
            return true;
        if (abort.load())
            return false;
        signal_word().wait(s);
    }
}

bool BlockQueue::wait_writable(const std::atomic<bool>& abort) const
{
    for (;;) {
        const std::uint64_t s = signal_word().load(std::memory_order_acquire);
        if (size() < slots_)
            return true;
        if (abort.load())
            return false;
        signal_word().wait(s);
    }
}

void BlockQueue::clear()
{
    head_.store(0);
    tail_.store(0);
}

void BlockQueue::wake() const { signal_all(); }

// ------------------------------------------------------- simulated device

SimulatedDevice::SimulatedDevice(SimDeviceConfig cfg)
    : cfg_(std::move(cfg)), out_q_(cfg_.queue_blocks, cfg_.block, 1), in_q_(cfg_.queue_blocks, cfg_.block, 2),
      played_(cfg_.block), mic_(cfg_.block), loop_(cfg_.block)
{
}

SimulatedDevice::~SimulatedDevice() { stop(); }

DeviceInfo SimulatedDevice::info() const { return DeviceInfo{cfg_.name, cfg_.fs, 2, 1, true}; }

void SimulatedDevice::set_speed(double speed) { cfg_.speed = speed; }

void SimulatedDevice::set_latency(std::size_t samples) { cfg_.latency = samples; }

void SimulatedDevice::set_injector(std::shared_ptr<InputInjector> inj) { injector_ = std::move(inj); }

void SimulatedDevice::start(bool output, bool input)
{
    stop();
    out_q_.clear();
    in_q_.clear();
    out_active_ = output;
    in_active_ = input;
    out_ended_ = false;
    position_ = 0;
    delay_.assign(cfg_.latency + cfg_.block, 0.0f);
    delay_pos_ = 0;
    underruns_ = 0;
    overruns_ = 0;
    ticks_ = 0;
    stopping_ = false;
    if (cfg_.speed > 0.0)
        clock_ = std::thread([this] { clock_loop(); });
}

void SimulatedDevice::stop()
{
    stopping_ = true;
    out_q_.wake();
    if (clock_.joinable())
        clock_.join();
}

void SimulatedDevice::tick()
{
    std::fill(played_.begin(), played_.end(), 0.0f);
    if (out_active_) {
        const std::span<float> ch[1] = {played_};
        if (!out_q_.try_pop(ch) && !out_ended_.load())
            underruns_.fetch_add(1);
    }
    const std::size_t L = delay_.size();
    for (std::size_t i = 0; i < cfg_.block; ++i) {
        delay_[delay_pos_] = played_[i];
        loop_[i] = delay_[(delay_pos_ + L - cfg_.latency) % L];
        delay_pos_ = (delay_pos_ + 1) % L;
    }
    std::fill(mic_.begin(), mic_.end(), 0.0f);
    if (injector_)
        injector_->inject(position_, played_, mic_);
    if (in_active_) {
        const std::span<const float> ch[2] = {mic_, loop_};
        if (!in_q_.try_push(ch))
            overruns_.fetch_add(1);
    }
    position_ += cfg_.block;
    ticks_.fetch_add(1);
}

void SimulatedDevice::clock_loop()
{
    sched_param sp{};
    sp.sched_priority = sched_get_priority_min(SCHED_FIFO);
    pthread_setschedparam(pthread_self(), SCHED_FIFO, &sp); // best effort

    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration<double>(static_cast<double>(cfg_.block) / cfg_.fs / cfg_.speed);
    const auto t0 = clock::now();
    for (std::uint64_t k = 1; !stopping_.load(); ++k) {
        std::this_thread::sleep_until(t0 + std::chrono::duration_cast<clock::duration>(period * static_cast<double>(k)));
        if (stopping_.load())
            break;
        tick();
    }
}

bool SimulatedDevice::write(std::span<const float> block)
{
    const std::span<const float> ch[1] = {block};
    for (;;) {
        if (stopping_.load())
            return false;
        if (out_q_.try_push(ch))
            return true;
        if (cfg_.speed <= 0.0)
            tick();
        else if (!out_q_.wait_writable(stopping_))
            return false;
    }
}

void SimulatedDevice::end_output() { out_ended_ = true; }

void SimulatedDevice::drain()
{
    while (out_q_.size() > 0 && !stopping_.load()) {
        if (cfg_.speed <= 0.0)
            tick();
        else
            std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
}

bool SimulatedDevice::read(std::span<float> mic, std::span<float> loopback)
{
    const std::span<float> ch[2] = {mic, loopback};
    for (;;) {
        if (in_q_.try_pop(ch))
            return true;
        if (stopping_.load())
            return false;
        if (cfg_.speed <= 0.0)
            tick();
        else if (!in_q_.wait_readable(stopping_))
            return false;
    }
}

std::vector<DeviceInfo> enumerate_devices() { return {SimulatedDevice().info()}; }

std::shared_ptr<AudioDevice> open_device(const std::string& name, const SimDeviceConfig& sim)
{
    if (name == sim.name || name == SimDeviceConfig{}.name)
        return std::make_shared<SimulatedDevice>(sim);
    throw Error(Errc::device_unavailable, "no such audio device: " + name);
}

// ------------------------------------------------------ sources and sinks

BufferSource::BufferSource(std::shared_ptr<const std::vector<float>> data, bool loop)
    : data_(std::move(data)), loop_(loop)
{
}

void BufferSource::fill(std::span<float> out)
{
    const auto& d = *data_;
    for (auto& v : out) {
        if (pos_ >= d.size()) {
            if (loop_ && !d.empty())
                pos_ = 0;
            else {
                v = 0.0f;
                continue;
            }
        }
        v = d[pos_++];
    }
}

StereoCapture::StereoCapture(std::size_t n) : voice_(n, 0.0f), loop_(n, 0.0f) {}

void StereoCapture::consume(std::span<const float> mic, std::span<const float> loopback)
{
    const std::size_t f = filled_.load(std::memory_order_relaxed);
    const std::size_t k = std::min(mic.size(), voice_.size() - f);
    std::copy_n(mic.data(), k, voice_.data() + f);
    std::copy_n(loopback.data(), std::min(k, loopback.size()), loop_.data() + f);
    filled_.store(f + k, std::memory_order_release);
}

// ---------------------------------------------------------------- engine

AudioEngine::AudioEngine(std::shared_ptr<AudioDevice> device, EngineConfig cfg)
    : cfg_(cfg), device_(std::move(device)), out_buf_(cfg.block), mic_buf_(cfg.block), loop_buf_(cfg.block)
{
}

AudioEngine::~AudioEngine()
{
    request_stop();
    std::lock_guard lock(ctl_);
    if (thread_.joinable())
        thread_.join();
}

void AudioEngine::set_device(std::shared_ptr<AudioDevice> device)
{
    std::lock_guard lock(ctl_);
    if (running_)
        throw Error(Errc::engine_busy, "cannot change device while a loop runs");
    device_ = std::move(device);
}

std::shared_ptr<AudioDevice> AudioEngine::device() const
{
    std::lock_guard lock(ctl_);
    return device_;
}

double AudioEngine::elapsed() const { return static_cast<double>(blocks_done() * cfg_.block) / cfg_.fs; }

void AudioEngine::start(LoopMode mode, BlockSource* source, BlockSink* sink, std::size_t n_samples,
                        std::function<void(const LoopReport&)> on_done)
{
    std::lock_guard lock(ctl_);
    if (running_)
        throw Error(Errc::engine_busy, "another loop is active");
    if (!device_)
        throw Error(Errc::device_unavailable, "no audio device selected");
    const bool out = mode != LoopMode::memo;
    const bool in = mode != LoopMode::playback;
    if ((out && !source) || (in && !sink))
        throw Error(Errc::invalid_argument, "loop needs a source and/or sink for its mode");
    if (thread_.joinable())
        thread_.join();
    stop_ = false;
    blocks_ = 0;
    running_ = true;
    thread_ = std::thread([=, this, cb = std::move(on_done)]() mutable { loop(mode, source, sink, n_samples, std::move(cb)); });
}

void AudioEngine::request_stop() { stop_ = true; }

LoopReport AudioEngine::wait()
{
    std::lock_guard lock(ctl_);
    if (thread_.joinable())
        thread_.join();
    return last_;
}

LoopReport AudioEngine::run_duplex(BlockSource& source, BlockSink& sink, LoopMode mode, double duration)
{
    const auto n = static_cast<std::size_t>(std::llround(duration * cfg_.fs));
    start(mode, &source, &sink, n);
    return wait();
}

void AudioEngine::loop(LoopMode mode, BlockSource* source, BlockSink* sink, std::size_t n_samples,
                       std::function<void(const LoopReport&)> on_done)
{
    sched_param sp{};
    sp.sched_priority = sched_get_priority_min(SCHED_FIFO);
    pthread_setschedparam(pthread_self(), SCHED_FIFO, &sp); // best effort

    const auto wall0 = std::chrono::steady_clock::now();
    AudioDevice& dev = *device_;
    const bool out = mode != LoopMode::memo;
    const bool in = mode != LoopMode::playback;
    const std::size_t B = cfg_.block;
    const std::uint64_t total =
        n_samples ? (n_samples + B - 1) / B : std::numeric_limits<std::uint64_t>::max();

    dev.start(out, in);
    std::uint64_t written = 0;
    bool ended = false;
    auto push_output = [&] {
        if (written >= total)
            return true;
        source->fill(out_buf_);
        if (!dev.write(out_buf_))
            return false;
        if (++written == total) {
            dev.end_output();
            ended = true;
        }
        return true;
    };

    LoopReport rep;
    rep.mode = mode;
    bool ok = true;
    if (out)
        for (std::size_t i = 0; i < cfg_.prefill && ok; ++i)
            ok = push_output();

    if (in) {
        for (std::uint64_t b = 0; b < total && ok; ++b) {
            if (!dev.read(mic_buf_, loop_buf_))
                break;
            sink->consume(mic_buf_, loop_buf_);
            blocks_.fetch_add(1, std::memory_order_release);
            if (stop_.load(std::memory_order_relaxed)) {
                rep.stopped_early = n_samples != 0 && b + 1 < total;
                break;
            }
            if (out)
                ok = push_output();
        }
    } else {
        while (ok && written < total) {
            if (stop_.load(std::memory_order_relaxed)) {
                rep.stopped_early = true;
                break;
            }
            ok = push_output();
            blocks_.store(written, std::memory_order_release); // prefill included
        }
        if (!rep.stopped_early) {
            if (!ended)
                dev.end_output();
            dev.drain();
        }
    }
    if (out && !ended)
        dev.end_output();
    dev.stop();

    rep.blocks = blocks_.load();
    rep.samples = n_samples ? std::min<std::uint64_t>(rep.blocks * B, n_samples) : rep.blocks * B;
    rep.underruns = dev.underruns();
    rep.overruns = dev.overruns();
    rep.elapsed = static_cast<double>(rep.blocks * B) / cfg_.fs;
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    last_ = rep;
    running_ = false;
    if (on_done)
        on_done(rep);
}

std::size_t measure_latency(std::span<const float> source, std::span<const float> capture, std::size_t max_lag)
{
    const std::size_t n = std::min(source.size(), capture.size());
    if (n == 0)
        return 0;
    std::size_t nfft = 2;
    while (nfft < n + max_lag)
        nfft <<= 1;
    std::vector<double> a(nfft, 0.0), b(nfft, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = capture[i];
        b[i] = source[i];
    }
    const auto r = circular_xcorr(a, b);
    std::size_t best = 0;
    for (std::size_t l = 1; l <= max_lag && l < nfft; ++l)
        if (r[l] > r[best])
            best = l;
    return best;
}

} // namespace foresp
