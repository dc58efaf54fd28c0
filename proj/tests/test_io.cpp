// Serialization round trips and rejection paths: WAV, key-value configs,
// checkpoints, dataset manifests.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "storm/checkpoint.hpp"
#include "storm/kvconfig.hpp"
#include "storm/manifest.hpp"
#include "storm/wav.hpp"
#include "test_util.hpp"

using namespace storm;
namespace fs = std::filesystem;

TEST_SUITE("io") {

TEST_CASE("wav round trip is exact after one quantization") {
  const auto dir = test_util::fresh_dir("io_wav");
  Waveform w = test_util::make_wave(4321, 7, 0.5);
  w.samples.push_back(1.5);    // clamps to 32767
  w.samples.push_back(-1.5);   // clamps to -32768
  const std::string path = (dir / "a.wav").string();
  write_wav(path, w);
  const Waveform r1 = read_wav(path);
  REQUIRE(r1.sample_rate == kPipelineSampleRate);
  REQUIRE(r1.samples.size() == w.samples.size());
  // A second pass through the 16-bit grid must be lossless.
  const std::string path2 = (dir / "b.wav").string();
  write_wav(path2, r1);
  const Waveform r2 = read_wav(path2);
  for (std::size_t i = 0; i < r1.samples.size(); ++i)
    CHECK(r1.samples[i] == r2.samples[i]);
  // First-pass quantization error bounded by half a step.
  for (std::size_t i = 0; i + 2 < w.samples.size(); ++i)
    CHECK(std::abs(r1.samples[i] - w.samples[i]) <= 0.5 / 32768.0 + 1e-12);
  CHECK(r1.samples[w.samples.size() - 2] == doctest::Approx(32767.0 / 32768.0));
  CHECK(r1.samples[w.samples.size() - 1] == doctest::Approx(-1.0));
}

TEST_CASE("wav reader rejects non-pipeline formats descriptively") {
  const auto dir = test_util::fresh_dir("io_wav_bad");
  const std::string good = (dir / "good.wav").string();
  write_wav(good, test_util::make_wave(256, 3));
  std::string bytes = test_util::read_file(good);

  auto patched = [&](std::size_t off, std::uint32_t value, int width) {
    std::string b = bytes;
    for (int i = 0; i < width; ++i)
      b[off + i] = static_cast<char>((value >> (8 * i)) & 0xff);
    const std::string p = (dir / "bad.wav").string();
    std::ofstream(p, std::ios::binary).write(b.data(),
                                             static_cast<long>(b.size()));
    return p;
  };
  // Canonical 44-byte header: channels at 22, sample rate at 24, bits at 34.
  CHECK_THROWS(read_wav(patched(22, 2, 2)));       // stereo
  CHECK_THROWS(read_wav(patched(24, 22050, 4)));   // wrong rate
  CHECK_THROWS(read_wav(patched(34, 8, 2)));       // wrong depth
  CHECK_THROWS(read_wav(patched(0, 0x46464952 ^ 1, 4)));  // bad RIFF magic
  CHECK_THROWS(read_wav((dir / "missing.wav").string()));
}

TEST_CASE("kvconfig round trips values bit-exactly") {
  KvConfig kv;
  kv.set("name", "run-1");
  kv.set_double("third", 1.0 / 3.0);
  kv.set_double("tenth", 0.1);
  kv.set_double("tiny", 1e-300);
  kv.set_double("neg", -1234.5678901234567);
  kv.set_int("steps", 600);
  kv.set_bool("flag", true);
  const KvConfig back = KvConfig::parse(kv.serialize());
  CHECK(back.get_or("name", "") == "run-1");
  CHECK(back.get_double("third") == 1.0 / 3.0);
  CHECK(back.get_double("tenth") == 0.1);
  CHECK(back.get_double("tiny") == 1e-300);
  CHECK(back.get_double("neg") == -1234.5678901234567);
  CHECK(back.get_int("steps") == 600);
  CHECK(back.get_bool("flag"));
}

TEST_CASE("kvconfig typed getters name the offending key") {
  KvConfig kv = KvConfig::parse("a=hello\n# comment line\n\nb=4\n");
  CHECK(kv.get_int("b") == 4);
  CHECK(!kv.has("missing"));
  CHECK_THROWS_WITH_AS(kv.get_double("a"),
                       doctest::Contains("a"), std::exception);
  CHECK_THROWS_WITH_AS(kv.get_int("missing"),
                       doctest::Contains("missing"), std::exception);
}

TEST_CASE("kvconfig file save/load") {
  const auto dir = test_util::fresh_dir("io_kv");
  KvConfig kv;
  kv.set_double("gamma", 1.5);
  kv.save((dir / "c.txt").string());
  const KvConfig back = KvConfig::load((dir / "c.txt").string());
  CHECK(back.get_double("gamma") == 1.5);
  CHECK_THROWS(KvConfig::load((dir / "nope.txt").string()));
}

TEST_CASE("format_double survives a parse round trip bit-exactly") {
  const double cases[] = {0.0,    -0.0,   1.0,      0.1,   1.0 / 3.0,
                          1e-300, 1e300,  -2.5e-17, 123456789.123456789};
  for (double v : cases) {
    const double back = std::stod(format_double(v));
    CHECK(std::memcmp(&back, &v, sizeof v) == 0);
  }
}

TEST_CASE("checkpoint round trips every field") {
  const auto dir = test_util::fresh_dir("io_ckpt");
  Checkpoint c;
  c.role = CheckpointRole::kScoreRefine;
  c.conditioning = ConditioningMode::kPostDenoiser;
  c.sde.gamma = 2.25;
  c.sde.sigma_min = 0.04;
  c.sde.sigma_max = 0.6;
  c.sde.t_max = 1.0;
  c.sde.t_eps = 0.02;
  c.base_channels = 4;
  c.emb_dim = 8;
  c.step = 12345;
  c.adam_t = 999;
  Rng rng(31);
  for (int i = 0; i < 257; ++i) {
    c.params.push_back(static_cast<float>(rng.normal()));
    c.ema.push_back(static_cast<float>(rng.normal()));
    c.adam_m.push_back(static_cast<float>(rng.normal()));
    c.adam_v.push_back(static_cast<float>(std::abs(rng.normal())));
  }
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(path, c);
  const Checkpoint b = load_checkpoint(path);
  CHECK(b.role == c.role);
  CHECK(b.conditioning == c.conditioning);
  CHECK(b.sde.gamma == c.sde.gamma);
  CHECK(b.sde.sigma_min == c.sde.sigma_min);
  CHECK(b.sde.sigma_max == c.sde.sigma_max);
  CHECK(b.sde.t_max == c.sde.t_max);
  CHECK(b.sde.t_eps == c.sde.t_eps);
  CHECK(b.base_channels == c.base_channels);
  CHECK(b.emb_dim == c.emb_dim);
  CHECK(b.step == c.step);
  CHECK(b.adam_t == c.adam_t);
  CHECK(b.params == c.params);
  CHECK(b.ema == c.ema);
  CHECK(b.adam_m == c.adam_m);
  CHECK(b.adam_v == c.adam_v);
  // Atomic write leaves no temporary behind.
  CHECK(!fs::exists(path + ".tmp"));
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  const auto dir = test_util::fresh_dir("io_ckpt_bad");
  Checkpoint c;
  c.params = {1.0f, 2.0f};
  c.ema = c.params;
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(path, c);
  std::string bytes = test_util::read_file(path);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::ofstream((dir / "bad.ckpt").string(), std::ios::binary)
      .write(bad_magic.data(), static_cast<long>(bad_magic.size()));
  CHECK_THROWS_WITH_AS(load_checkpoint((dir / "bad.ckpt").string()),
                       doctest::Contains("magic"), std::exception);

  std::ofstream((dir / "trunc.ckpt").string(), std::ios::binary)
      .write(bytes.data(), static_cast<long>(bytes.size() / 2));
  CHECK_THROWS(load_checkpoint((dir / "trunc.ckpt").string()));
  CHECK_THROWS(load_checkpoint((dir / "missing.ckpt").string()));
}

TEST_CASE("manifest round trip resolves paths relative to its directory") {
  const auto dir = test_util::fresh_dir("io_manifest");
  fs::create_directories(dir / "train");
  DatasetManifest m;
  ManifestRow r;
  r.id = "utt0001";
  r.split = "train";
  r.clean_path = "train/utt0001_clean.wav";
  r.corrupt_path = "train/utt0001_noisy.wav";
  r.noise_path = "train/utt0001_noise.wav";
  r.snr_db = 3.5;
  r.has_snr = true;
  m.rows.push_back(r);
  ManifestRow t = r;
  t.id = "utt0002";
  t.split = "test";
  t.clean_path = "train/utt0002_clean.wav";
  t.corrupt_path = "train/utt0002_noisy.wav";
  m.rows.push_back(t);
  const std::string path = (dir / "manifest.txt").string();
  save_manifest(path, m);

  // Schema header present.
  const std::string text = test_util::read_file(path);
  CHECK(text.rfind(kManifestSchema, 0) == 0);

  const DatasetManifest back = load_manifest(path);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].id == "utt0001");
  CHECK(back.rows[0].clean_path ==
        (dir / "train/utt0001_clean.wav").string());
  CHECK(back.rows[0].snr_db == 3.5);
  CHECK(back.rows[0].has_snr);
  CHECK(back.split_rows("train").size() == 1);
  CHECK(back.split_rows("test").size() == 1);
  back.validate(false);
  // Files do not exist yet, so existence checking must fail.
  CHECK_THROWS(back.validate(true));
}

TEST_CASE("manifest validation rejects duplicates and unknown splits") {
  DatasetManifest m;
  ManifestRow r;
  r.id = "a";
  r.split = "train";
  r.clean_path = "/tmp/x.wav";
  r.corrupt_path = "/tmp/y.wav";
  m.rows.push_back(r);
  m.rows.push_back(r);  // duplicate id
  CHECK_THROWS(m.validate(false));
  m.rows.pop_back();
  m.rows[0].split = "holdout";
  CHECK_THROWS(m.validate(false));
}

}  // TEST_SUITE
