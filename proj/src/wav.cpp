#include "foresp/wav.hpp"

#include "foresp/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace foresp {

namespace {

void put_u16(std::string& s, std::uint16_t v)
{
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& s, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p)
{
    return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

} // namespace

void write_wav(const std::filesystem::path& path, const WavData& wav)
{
    if (wav.channels.empty() || wav.channels[0].empty())
        throw Error(Errc::nothing_to_save, "write_wav: no samples");
    if (wav.bits != 16 && wav.bits != 24)
        throw Error(Errc::invalid_argument, "write_wav: bits must be 16 or 24");
    const std::size_t nch = wav.channels.size();
    const std::size_t n = wav.channels[0].size();
    for (const auto& c : wav.channels)
        if (c.size() != n)
            throw Error(Errc::invalid_argument, "write_wav: channel length mismatch");

    const int bytes = wav.bits / 8;
    const double full = wav.bits == 16 ? 32768.0 : 8388608.0;
    std::string data;
    data.reserve(n * nch * bytes);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < nch; ++c) {
            double v = std::round(wav.channels[c][i] * full);
            v = std::clamp(v, -full, full - 1.0);
            auto q = static_cast<std::int32_t>(v);
            for (int b = 0; b < bytes; ++b)
                data.push_back(static_cast<char>((q >> (8 * b)) & 0xff));
        }
    }

    std::string list;
    if (!wav.comment.empty()) {
        std::string text = wav.comment;
        text.push_back('\0');
        if (text.size() % 2)
            text.push_back('\0');
        list = "INFO";
        list += "ICMT";
        put_u32(list, static_cast<std::uint32_t>(text.size()));
        list += text;
    }

    std::string out = "RIFF";
    const std::uint32_t riff_size = 4 + (8 + 16) + (list.empty() ? 0 : 8 + list.size()) + 8 + data.size() + (data.size() % 2);
    put_u32(out, riff_size);
    out += "WAVE";
    out += "fmt ";
    put_u32(out, 16);
    put_u16(out, 1);
    put_u16(out, static_cast<std::uint16_t>(nch));
    put_u32(out, static_cast<std::uint32_t>(wav.fs));
    put_u32(out, static_cast<std::uint32_t>(wav.fs * nch * bytes));
    put_u16(out, static_cast<std::uint16_t>(nch * bytes));
    put_u16(out, static_cast<std::uint16_t>(wav.bits));
    if (!list.empty()) {
        out += "LIST";
        put_u32(out, static_cast<std::uint32_t>(list.size()));
        out += list;
    }
    out += "data";
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    out += data;
    if (data.size() % 2)
        out.push_back('\0');

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw Error(Errc::storage_failure, "cannot open " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f)
        throw Error(Errc::storage_failure, "write failed: " + path.string());
}

WavData read_wav(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw Error(Errc::storage_failure, "cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) || std::memcmp(buf.data() + 8, "WAVE", 4))
        throw Error(Errc::parse_error, "not a RIFF/WAVE file: " + path.string());

    WavData wav;
    int nch = 0, fmt_tag = 0;
    const unsigned char* pcm = nullptr;
    std::size_t pcm_bytes = 0;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const unsigned char* h = buf.data() + pos;
        std::size_t sz = get_u32(h + 4);
        const unsigned char* body = h + 8;
        sz = std::min(sz, buf.size() - pos - 8);
        if (!std::memcmp(h, "fmt ", 4) && sz >= 16) {
            fmt_tag = get_u16(body);
            nch = get_u16(body + 2);
            wav.fs = get_u32(body + 4);
            wav.bits = get_u16(body + 14);
        } else if (!std::memcmp(h, "data", 4)) {
            pcm = body;
            pcm_bytes = sz;
        } else if (!std::memcmp(h, "LIST", 4) && sz >= 4 && !std::memcmp(body, "INFO", 4)) {
            std::size_t p = 4;
            while (p + 8 <= sz) {
                std::size_t isz = get_u32(body + p + 4);
                if (!std::memcmp(body + p, "ICMT", 4)) {
                    const char* s = reinterpret_cast<const char*>(body + p + 8);
                    std::size_t len = std::min(isz, sz - p - 8);
                    wav.comment.assign(s, strnlen(s, len));
                }
                p += 8 + isz + (isz % 2);
            }
        }
        pos += 8 + sz + (sz % 2);
    }
    if (fmt_tag != 1 || nch <= 0 || (wav.bits != 16 && wav.bits != 24) || !pcm)
        throw Error(Errc::parse_error, "unsupported WAV layout: " + path.string());

    const int bytes = wav.bits / 8;
    const double full = wav.bits == 16 ? 32768.0 : 8388608.0;
    const std::size_t n = pcm_bytes / (bytes * nch);
    wav.channels.assign(nch, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < nch; ++c) {
            const unsigned char* p = pcm + (i * nch + c) * bytes;
            std::int32_t v;
            if (bytes == 2)
                v = static_cast<std::int16_t>(get_u16(p));
            else
                v = static_cast<std::int32_t>((p[0] << 8) | (p[1] << 16) | (static_cast<std::uint32_t>(p[2]) << 24)) >> 8;
            wav.channels[c][i] = v / full;
        }
    }
    return wav;
}

} // namespace foresp
