#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace foresp {

inline constexpr std::size_t kBlockSize = 1024;
inline constexpr double kSampleRate = 44100.0;

enum class LoopMode { calibration, voice_check, response_test, playback, memo };
const char* to_string(LoopMode m);

// Single-writer / single-reader sample ring. The reader copies the latest
// samples without ever blocking the writer and detects torn reads.
class SampleRing {
public:
    explicit SampleRing(std::size_t capacity);
    std::size_t capacity() const { return data_.size(); }
    std::uint64_t written() const { return published_.load(std::memory_order_acquire); }

    void write(std::span<const float> x);
    // latest out.size() samples; false if not yet available or overwritten
    // while copying
    bool snapshot(std::span<float> out) const;
    // the out.size() samples ending at absolute position `end`
    bool snapshot_at(std::uint64_t end, std::span<float> out) const;
    void clear();

private:
    std::vector<std::atomic<float>> data_;
    std::atomic<std::uint64_t> announced_{0};
    std::atomic<std::uint64_t> published_{0};
};

// SPSC queue of fixed-size multi-channel blocks.
class BlockQueue {
public:
    BlockQueue(std::size_t slots, std::size_t block, std::size_t channels);
    bool try_push(std::span<const std::span<const float>> chans);
    bool try_pop(std::span<const std::span<float>> chans);
    // wait until a block can be popped; false when `abort` is set
    bool wait_readable(const std::atomic<bool>& abort) const;
    bool wait_writable(const std::atomic<bool>& abort) const;
    std::size_t size() const;
    void clear();
    void wake() const;

private:
    std::size_t slots_, block_, channels_;
    std::vector<float> data_;
    std::atomic<std::uint64_t> head_{0}; // consumer
    std::atomic<std::uint64_t> tail_{0}; // producer
};

struct DeviceInfo {
    std::string name;
    double fs = kSampleRate;
    int in_channels = 2;
    int out_channels = 1;
    bool simulated = true;
};

// Two streams clocked by the device: write() feeds the output stream,
// read() returns the next captured block (mic, loop-back).
class AudioDevice {
public:
    virtual ~AudioDevice() = default;
    virtual DeviceInfo info() const = 0;
    virtual void start(bool output, bool input) = 0;
    virtual void stop() = 0;
    // Blocks while the output queue is full. False once stopped.
    virtual bool write(std::span<const float> block) = 0;
    // No more output follows; draining the queue is not an underrun.
    virtual void end_output() = 0;
    // Waits until all queued output has been played.
    virtual void drain() = 0;
    virtual bool read(std::span<float> mic, std::span<float> loopback) = 0;
    virtual std::uint64_t underruns() const = 0;
    virtual std::uint64_t overruns() const = 0;
};

// Supplies the microphone signal of a simulated device. Called on the
// device clock thread with the block just played.
class InputInjector {
public:
    virtual ~InputInjector() = default;
    virtual void inject(std::uint64_t position, std::span<const float> played, std::span<float> mic) = 0;
};

struct SimDeviceConfig {
    std::string name = "Simulated duplex";
    double fs = kSampleRate;
    std::size_t block = kBlockSize;
    double speed = 1.0;         // device clock rate re real time; <= 0 runs in lockstep
    std::size_t latency = 0;    // loop-back delay in samples
    std::size_t queue_blocks = 8;
};

class SimulatedDevice final : public AudioDevice {
public:
    explicit SimulatedDevice(SimDeviceConfig cfg = {});
    ~SimulatedDevice() override;

    DeviceInfo info() const override;
    const SimDeviceConfig& config() const { return cfg_; }
    void set_speed(double speed);
    void set_latency(std::size_t samples);
    void set_injector(std::shared_ptr<InputInjector> inj);

    void start(bool output, bool input) override;
    void stop() override;
    bool write(std::span<const float> block) override;
    void end_output() override;
    void drain() override;
    bool read(std::span<float> mic, std::span<float> loopback) override;
    std::uint64_t underruns() const override { return underruns_.load(); }
    std::uint64_t overruns() const override { return overruns_.load(); }

private:
    void tick();
    void clock_loop();

    SimDeviceConfig cfg_;
    std::shared_ptr<InputInjector> injector_;
    BlockQueue out_q_, in_q_;
    std::vector<float> played_, mic_, loop_, delay_;
    std::size_t delay_pos_ = 0;
    std::uint64_t position_ = 0;
    bool out_active_ = false, in_active_ = false;
    std::atomic<bool> out_ended_{false};
    std::atomic<bool> stopping_{true};
    std::atomic<std::uint64_t> underruns_{0}, overruns_{0}, ticks_{0};
    std::thread clock_;
};

std::vector<DeviceInfo> enumerate_devices();
// Unknown names raise device-unavailable.
std::shared_ptr<AudioDevice> open_device(const std::string& name, const SimDeviceConfig& sim = {});

class BlockSource {
public:
    virtual ~BlockSource() = default;
    virtual void fill(std::span<float> out) = 0;
};

class BlockSink {
public:
    virtual ~BlockSink() = default;
    virtual void consume(std::span<const float> mic, std::span<const float> loopback) = 0;
};

// Plays a precomputed buffer, optionally looping; zeros after the end.
class BufferSource final : public BlockSource {
public:
    BufferSource(std::shared_ptr<const std::vector<float>> data, bool loop);
    void fill(std::span<float> out) override;
    void rewind() { pos_ = 0; }

private:
    std::shared_ptr<const std::vector<float>> data_;
    bool loop_;
    std::size_t pos_ = 0;
};

// Preallocated stereo capture; samples beyond capacity are dropped.
class StereoCapture final : public BlockSink {
public:
    explicit StereoCapture(std::size_t n);
    void consume(std::span<const float> mic, std::span<const float> loopback) override;
    std::size_t size() const { return filled_.load(std::memory_order_acquire); }
    const std::vector<float>& voice() const { return voice_; }
    const std::vector<float>& loopback() const { return loop_; }

private:
    std::vector<float> voice_, loop_;
    std::atomic<std::size_t> filled_{0};
};

class RingSink final : public BlockSink {
public:
    explicit RingSink(SampleRing& ring) : ring_(ring) {}
    void consume(std::span<const float> mic, std::span<const float>) override { ring_.write(mic); }

private:
    SampleRing& ring_;
};

struct EngineConfig {
    std::size_t block = kBlockSize;
    double fs = kSampleRate;
    std::size_t prefill = 2; // output blocks queued before the clock starts
};

struct LoopReport {
    LoopMode mode = LoopMode::response_test;
    std::uint64_t blocks = 0;
    std::uint64_t samples = 0;
    std::uint64_t underruns = 0;
    std::uint64_t overruns = 0;
    double elapsed = 0.0;     // device time, seconds
    double wall_seconds = 0.0;
    bool stopped_early = false;
};

// Runs one loop at a time on its own streaming thread.
class AudioEngine {
public:
    explicit AudioEngine(std::shared_ptr<AudioDevice> device, EngineConfig cfg = {});
    ~AudioEngine();

    const EngineConfig& config() const { return cfg_; }
    void set_device(std::shared_ptr<AudioDevice> device);
    std::shared_ptr<AudioDevice> device() const;

    // n_samples == 0 runs until request_stop(). on_done runs on the
    // streaming thread after the loop has exited.
    void start(LoopMode mode, BlockSource* source, BlockSink* sink, std::size_t n_samples,
               std::function<void(const LoopReport&)> on_done = {});
    void request_stop();
    LoopReport wait();
    bool running() const { return running_.load(); }
    std::uint64_t blocks_done() const { return blocks_.load(std::memory_order_acquire); }
    double elapsed() const;

    LoopReport run_duplex(BlockSource& source, BlockSink& sink, LoopMode mode, double duration);

private:
    void loop(LoopMode mode, BlockSource* source, BlockSink* sink, std::size_t n_samples,
              std::function<void(const LoopReport&)> on_done);

    EngineConfig cfg_;
    std::shared_ptr<AudioDevice> device_;
    mutable std::mutex ctl_; // control thread only, never taken by the loop
    std::thread thread_;
    std::atomic<bool> running_{false};
    std::atomic<bool> stop_{false};
    std::atomic<std::uint64_t> blocks_{0};
    LoopReport last_;
    std::vector<float> out_buf_, mic_buf_, loop_buf_;
};

// Lag (samples) maximizing the cross-correlation of capture against source.
std::size_t measure_latency(std::span<const float> source, std::span<const float> capture, std::size_t max_lag);

} // namespace foresp
