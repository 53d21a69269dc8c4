#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace foresp {

struct WavData {
    double fs = 44100.0;
    int bits = 16;
    std::vector<std::vector<double>> channels;
    std::string comment; // LIST-INFO ICMT, empty when absent
};

// PCM 16 or 24 bit. Samples are clamped to [-1, 1 - 1 LSB]. A non-empty
// comment is written as a LIST/INFO/ICMT chunk.
void write_wav(const std::filesystem::path& path, const WavData& wav);
WavData read_wav(const std::filesystem::path& path);

} // namespace foresp
