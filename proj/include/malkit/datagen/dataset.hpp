#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "malkit/datagen/synth.hpp"
#include "malkit/dsp/signal.hpp"
#include "malkit/dsp/wav.hpp"
#include "malkit/error.hpp"
#include "malkit/parallel.hpp"

namespace malkit::datagen {

enum class Split { train, val, test_in_domain, test_out_domain };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test_in_domain: return "test_in_domain";
    case Split::test_out_domain: return "test_out_domain";
  }
  return "unknown";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test_in_domain") return Split::test_in_domain;
  if (s == "test_out_domain") return Split::test_out_domain;
  fail(ErrorKind::format, "unknown split '" + std::string(s) + "'");
}

inline bool is_in_domain_noise(NoiseKind k) {
  return k == NoiseKind::white || k == NoiseKind::pink;
}

struct ManifestEntry {
  std::string id;
  Split split = Split::train;
  ClipSpec spec;
};

struct DatasetManifest {
  std::vector<ManifestEntry> clips;

  /// Out-of-domain clips use only hum/babble; every other split uses only
  /// white/pink, so the two never share a noise kind.
  void validate() const {
    std::set<std::string> ids;
    for (const auto& c : clips) {
      c.spec.validate();
      require(ids.insert(c.id).second, ErrorKind::precondition,
              "manifest: duplicate clip id '" + c.id + "'");
      const bool ood = c.split == Split::test_out_domain;
      require(ood != is_in_domain_noise(c.spec.noise_kind), ErrorKind::precondition,
              "manifest: clip '" + c.id + "' uses noise '" +
                  std::string(to_string(c.spec.noise_kind)) + "' not allowed in split " +
                  std::string(to_string(c.split)));
    }
  }

  std::pair<std::uint64_t, std::uint64_t> seed_range() const {
    require(!clips.empty(), ErrorKind::precondition, "manifest: empty");
    std::uint64_t lo = clips.front().spec.seed, hi = lo;
    for (const auto& c : clips) {
      lo = std::min(lo, c.spec.seed);
      hi = std::max(hi, c.spec.seed);
    }
    return {lo, hi};
  }
};

struct SplitSizes {
  std::size_t train = 500;
  std::size_t val = 50;
  std::size_t test_in_domain = 100;
  std::size_t test_out_domain = 100;

  bool operator==(const SplitSizes&) const = default;
};

/// Seeds are contiguous per split, starting at base_seed + split * 1'000'000.
inline DatasetManifest make_manifest(std::uint64_t base_seed, const SplitSizes& sizes,
                                     double duration_s = 2.0, int sample_rate = 16000) {
  DatasetManifest m;
  const std::pair<Split, std::size_t> plan[] = {
      {Split::train, sizes.train},
      {Split::val, sizes.val},
      {Split::test_in_domain, sizes.test_in_domain},
      {Split::test_out_domain, sizes.test_out_domain}};
  for (const auto& [split, count] : plan) {
    const std::uint64_t offset = base_seed + static_cast<std::uint64_t>(split) * 1'000'000ull;
    for (std::size_t i = 0; i < count; ++i) {
      ManifestEntry e;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s_%04zu", std::string(to_string(split)).c_str(), i);
      e.id = buf;
      e.split = split;
      e.spec.seed = offset + i;
      e.spec.duration_s = duration_s;
      e.spec.sample_rate = sample_rate;
      auto rng = clip_rng(e.spec.seed, kStreamEnvelope + 100);
      const bool pick_second = (rng() & 1u) != 0;
      if (split == Split::test_out_domain) {
        e.spec.noise_kind = pick_second ? NoiseKind::babble : NoiseKind::hum;
      } else {
        e.spec.noise_kind = pick_second ? NoiseKind::pink : NoiseKind::white;
      }
      e.spec.voiced_fraction = std::uniform_real_distribution<double>(0.55, 0.85)(rng);
      m.clips.push_back(std::move(e));
    }
  }
  return m;
}

struct ClipPair {
  std::string id;
  Split split = Split::train;
  NoiseKind noise_kind = NoiseKind::white;
  double snr_db = 0.0;
  dsp::Waveform clean;
  dsp::Waveform noisy;
};

inline constexpr double kHeadroomPeak = 0.99;

/// Synthesizes, mixes, applies joint headroom scaling and rounds both signals
/// onto the 16-bit grid, so the in-memory pair equals what a WAV round trip
/// yields.
inline ClipPair build_clip(const ManifestEntry& entry) {
  const ClipSpec& spec = entry.spec;
  spec.validate();
  ClipPair pair;
  pair.id = entry.id;
  pair.split = entry.split;
  pair.noise_kind = spec.noise_kind;
  if (spec.snr_db) {
    pair.snr_db = *spec.snr_db;
  } else {
    auto rng = clip_rng(spec.seed, kStreamSnr);
    pair.snr_db = std::uniform_real_distribution<double>(-5.0, 20.0)(rng);
  }
  dsp::Waveform clean = synth_speech(spec);
  const dsp::Waveform noise =
      synth_noise(spec.noise_kind, spec.seed, spec.duration_s, spec.sample_rate);
  dsp::Waveform noisy = dsp::mix_at_snr(clean, noise, pair.snr_db);
  const double pk = dsp::peak(noisy.samples);
  if (pk > kHeadroomPeak) {
    const double g = kHeadroomPeak / pk;
    for (auto& s : clean.samples) s *= g;
    for (auto& s : noisy.samples) s *= g;
  }
  pair.clean = dsp::quantize_pcm16(std::move(clean));
  pair.noisy = dsp::quantize_pcm16(std::move(noisy));
  return pair;
}

inline std::vector<ClipPair> build_clips(const DatasetManifest& manifest) {
  manifest.validate();
  std::vector<ClipPair> out(manifest.clips.size());
  parallel_for(out.size(), [&](std::size_t i) { out[i] = build_clip(manifest.clips[i]); });
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kIndexFile = "index.tsv";

/// Writes <out_dir>/<split>/<id>_{clean,noisy}.wav and a tab-separated index
/// (id, split, noise_kind, snr_db, clean_path, noisy_path; paths relative to
/// out_dir), one line per clip.
inline std::vector<ClipPair> build_dataset(const DatasetManifest& manifest,
                                           const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  auto clips = build_clips(manifest);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec, ErrorKind::io, "cannot create '" + out_dir.string() + "': " + ec.message());
  std::ostringstream index;
  for (const auto& c : clips) {
    const fs::path split_dir = fs::path(std::string(to_string(c.split)));
    fs::create_directories(out_dir / split_dir, ec);
    require(!ec, ErrorKind::io,
            "cannot create '" + (out_dir / split_dir).string() + "': " + ec.message());
    const fs::path clean_rel = split_dir / (c.id + "_clean.wav");
    const fs::path noisy_rel = split_dir / (c.id + "_noisy.wav");
    dsp::write_wav(out_dir / clean_rel, c.clean);
    dsp::write_wav(out_dir / noisy_rel, c.noisy);
    index << c.id << '\t' << to_string(c.split) << '\t' << to_string(c.noise_kind) << '\t'
          << format_double(c.snr_db) << '\t' << clean_rel.generic_string() << '\t'
          << noisy_rel.generic_string() << '\n';
  }
  std::ofstream out(out_dir / kIndexFile, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io,
          "cannot write '" + (out_dir / kIndexFile).string() + "'");
  out << index.str();
  require(static_cast<bool>(out), ErrorKind::io,
          "write failed for '" + (out_dir / kIndexFile).string() + "'");
  return clips;
}

/// Reads a dataset tree written by build_dataset.
inline std::vector<ClipPair> load_dataset(const std::filesystem::path& dir) {
  const auto index_path = dir / kIndexFile;
  std::ifstream in(index_path);
  require(static_cast<bool>(in), ErrorKind::not_found,
          "dataset index '" + index_path.string() + "' not found");
  std::vector<ClipPair> clips;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    require(cols.size() == 6, ErrorKind::format,
            index_path.string() + ":" + std::to_string(lineno) + ": expected 6 columns");
    ClipPair c;
    c.id = cols[0];
    c.split = parse_split(cols[1]);
    c.noise_kind = parse_noise_kind(cols[2]);
    c.snr_db = std::stod(cols[3]);
    c.clean = dsp::read_wav(dir / cols[4]);
    c.noisy = dsp::read_wav(dir / cols[5]);
    clips.push_back(std::move(c));
  }
  return clips;
}

inline std::vector<ClipPair> select_split(const std::vector<ClipPair>& clips, Split split) {
  std::vector<ClipPair> out;
  for (const auto& c : clips) {
    if (c.split == split) out.push_back(c);
  }
  return out;
}

}  // namespace malkit::datagen
