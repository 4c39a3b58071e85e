#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hubert_ap {

inline constexpr int kSampleRate = 16000;

/// Mono audio normalized to [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
};

/// Parses an in-memory RIFF/WAVE image. Accepts PCM16 and 32-bit IEEE float,
/// mono, 16 kHz. PCM16 samples are scaled by 1/32768.
AudioBuffer parse_wav(std::span<const std::uint8_t> bytes);

AudioBuffer read_wav(const std::filesystem::path& path);

/// Serializes as mono PCM16; samples are clipped to [-1, 32767/32768].
std::vector<std::uint8_t> encode_wav_pcm16(const AudioBuffer& audio);

void write_wav_pcm16(const std::filesystem::path& path, const AudioBuffer& audio);

}  // namespace hubert_ap
