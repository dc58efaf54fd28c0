#include "storm/wav.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "storm/bytes.hpp"

namespace storm {

namespace {

std::string fourcc(std::istream& is) {
  char c[4];
  is.read(c, 4);
  if (!is) throw std::runtime_error("unexpected end of WAV file");
  return std::string(c, 4);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open WAV file: " + path);

  if (fourcc(is) != "RIFF")
    throw std::runtime_error(path + ": not a RIFF file");
  (void)read_u32le(is);  // overall size; chunk walk below is authoritative
  if (fourcc(is) != "WAVE")
    throw std::runtime_error(path + ": RIFF file is not WAVE");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<double> samples;
  bool have_data = false;

  while (is.peek() != EOF) {
    const std::string id = fourcc(is);
    const std::uint32_t size = read_u32le(is);
    if (id == "fmt ") {
      if (size < 16) throw std::runtime_error(path + ": malformed fmt chunk");
      format = read_u16le(is);
      channels = read_u16le(is);
      rate = read_u32le(is);
      (void)read_u32le(is);  // byte rate
      (void)read_u16le(is);  // block align
      bits = read_u16le(is);
      is.ignore(size - 16);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt)
        throw std::runtime_error(path + ": data chunk precedes fmt chunk");
      if (format != 1)
        throw std::runtime_error(path + ": only PCM (format 1) is supported, got format " +
                                 std::to_string(format));
      if (channels != 1)
        throw std::runtime_error(path + ": only mono is supported, got " +
                                 std::to_string(channels) + " channels");
      if (bits != 16)
        throw std::runtime_error(path + ": only 16-bit samples are supported, got " +
                                 std::to_string(bits) + "-bit");
      if (rate != static_cast<std::uint32_t>(kPipelineSampleRate))
        throw std::runtime_error(path + ": only 16000 Hz is supported, got " +
                                 std::to_string(rate) + " Hz (no resampling)");
      const std::uint32_t n = size / 2;
      samples.resize(n);
      for (std::uint32_t i = 0; i < n; ++i)
        samples[i] = static_cast<double>(read_i16le(is)) / 32768.0;
      if (size % 2) is.ignore(1);  // chunks are word-aligned
      have_data = true;
    } else {
      is.ignore(size + (size % 2));
      if (!is) break;
    }
  }

  if (!have_data) throw std::runtime_error(path + ": no data chunk found");
  Waveform w;
  w.samples = std::move(samples);
  w.sample_rate = kPipelineSampleRate;
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  if (w.sample_rate != kPipelineSampleRate)
    throw std::runtime_error("write_wav: sample rate must be 16000 Hz");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot create WAV file: " + path);

  const std::uint32_t data_bytes =
      static_cast<std::uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  write_u32le(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_u32le(os, 16);
  write_u16le(os, 1);  // PCM
  write_u16le(os, 1);  // mono
  write_u32le(os, kPipelineSampleRate);
  write_u32le(os, kPipelineSampleRate * 2);  // byte rate
  write_u16le(os, 2);                        // block align
  write_u16le(os, 16);                       // bits per sample
  os.write("data", 4);
  write_u32le(os, data_bytes);
  for (const double s : w.samples) {
    double v = std::nearbyint(s * 32768.0);
    if (v > 32767.0) v = 32767.0;
    if (v < -32768.0) v = -32768.0;
    write_i16le(os, static_cast<std::int16_t>(v));
  }
  if (!os) throw std::runtime_error("write failure on WAV file: " + path);
}

}  // namespace storm
