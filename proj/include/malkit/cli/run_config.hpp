#pragma once

// Flat `key = value` run configuration. Every key has a default; a file only
// needs to name what it changes. serialize() writes every key, so the copy
// stored in a run directory pins the run even if defaults later move.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "malkit/binary_io.hpp"
#include "malkit/datagen/dataset.hpp"
#include "malkit/eval/metrics.hpp"
#include "malkit/eval/probe.hpp"
#include "malkit/eval/report.hpp"
#include "malkit/model/model.hpp"
#include "malkit/training/schedule.hpp"

namespace malkit::cli {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string run_dir = "runs/default";

  datagen::SplitSizes corpus{};
  double clip_seconds = 2.0;
  int sample_rate = 16000;

  model::ModelConfig model{};
  training::TrainSchedule schedule{};  // variant is chosen per finetune command

  std::size_t aux_clips = 200;
  int aux_epochs = 5;

  int iterate_k = 25;
  std::size_t iterate_clips = 100;
  std::size_t probe_clips = 100;
  std::vector<double> probe_snrs = eval::kProbeSnrs;
  std::size_t n_mels = 40;
  std::size_t n_ceps = 13;

  eval::MetricConfig metric_config() const {
    eval::MetricConfig m;
    m.stft = model.stft;
    m.n_mels = n_mels;
    m.n_ceps = n_ceps;
    return m;
  }

  datagen::DatasetManifest manifest() const {
    return datagen::make_manifest(seed, corpus, clip_seconds, sample_rate);
  }

  void validate() const {
    model.validate();
    schedule.validate();
    require(clip_seconds > 0.0 && sample_rate > 0, ErrorKind::config,
            "config: clip_seconds and sample_rate must be positive");
    require(corpus.train > 0 && corpus.val > 0, ErrorKind::config,
            "config: corpus_train and corpus_val must be positive");
    require(static_cast<double>(model.stft.fft_size) <= clip_seconds * sample_rate,
            ErrorKind::config, "config: clips are shorter than one STFT frame");
    require(iterate_k >= 1, ErrorKind::config, "config: iterate_k must be >= 1");
    require(probe_snrs.size() >= 2, ErrorKind::config, "config: probe_snrs needs >= 2 values");
    require(aux_epochs >= 1 && aux_clips >= 1, ErrorKind::config,
            "config: aux_epochs and aux_clips must be >= 1");
  }

  bool operator==(const RunConfig&) const = default;
};

namespace config_detail {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Parsers throw std::invalid_argument; the caller attaches line and key.
template <typename T>
T parse_int(const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw std::invalid_argument("expected an integer");
  return v;
}

inline double parse_real(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || !std::isfinite(v)) throw std::invalid_argument("expected a finite number");
  return v;
}

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto a = item.find_first_not_of(" \t"), b = item.find_last_not_of(" \t");
    if (a == std::string::npos) throw std::invalid_argument("empty list element");
    out.push_back(parse_real(item.substr(a, b - a + 1)));
  }
  return out;
}

template <typename T>
Field int_field(std::string key, T RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member](RunConfig& c, const std::string& s) { c.*member = parse_int<T>(s); }};
}

template <typename T>
Field int_ref(std::string key, std::function<T&(RunConfig&)> ref) {
  return {key, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const std::string& s) { ref(c) = parse_int<T>(s); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(int_field("seed", &RunConfig::seed));
    f.push_back({"run_dir", [](const RunConfig& c) { return c.run_dir; },
                 [](RunConfig& c, const std::string& s) {
                   if (s.empty()) throw std::invalid_argument("empty path");
                   c.run_dir = s;
                 }});
    f.push_back(int_ref<std::size_t>("corpus_train", [](RunConfig& c) -> auto& { return c.corpus.train; }));
    f.push_back(int_ref<std::size_t>("corpus_val", [](RunConfig& c) -> auto& { return c.corpus.val; }));
    f.push_back(int_ref<std::size_t>("corpus_test_in_domain",
                                     [](RunConfig& c) -> auto& { return c.corpus.test_in_domain; }));
    f.push_back(int_ref<std::size_t>("corpus_test_out_domain",
                                     [](RunConfig& c) -> auto& { return c.corpus.test_out_domain; }));
    f.push_back({"clip_seconds", [](const RunConfig& c) { return eval::exact(c.clip_seconds); },
                 [](RunConfig& c, const std::string& s) { c.clip_seconds = parse_real(s); }});
    f.push_back(int_field("sample_rate", &RunConfig::sample_rate));
    f.push_back(int_ref<std::size_t>("fft_size", [](RunConfig& c) -> auto& { return c.model.stft.fft_size; }));
    f.push_back(int_ref<std::size_t>("hop", [](RunConfig& c) -> auto& { return c.model.stft.hop; }));
    f.push_back({"window", [](const RunConfig& c) { return std::string(dsp::to_string(c.model.stft.window)); },
                 [](RunConfig& c, const std::string& s) {
                   try {
                     c.model.stft.window = dsp::parse_window_kind(s);
                   } catch (const Error&) {
                     throw std::invalid_argument("expected hann or vorbis");
                   }
                 }});
    f.push_back(int_ref<std::size_t>("lookahead_frames",
                                     [](RunConfig& c) -> auto& { return c.model.stft.lookahead_frames; }));
    f.push_back({"channels",
                 [](const RunConfig& c) {
                   const auto& ch = c.model.channels;
                   return std::to_string(ch[0]) + "," + std::to_string(ch[1]) + "," + std::to_string(ch[2]);
                 },
                 [](RunConfig& c, const std::string& s) {
                   const auto v = parse_list(s);
                   if (v.size() != 3) throw std::invalid_argument("expected three channel counts");
                   for (std::size_t i = 0; i < 3; ++i) {
                     if (v[i] < 1 || v[i] != std::floor(v[i])) throw std::invalid_argument("expected positive integers");
                     c.model.channels[i] = static_cast<std::size_t>(v[i]);
                   }
                 }});
    f.push_back(int_ref<std::size_t>("kernel", [](RunConfig& c) -> auto& { return c.model.kernel; }));
    f.push_back(int_ref<int>("n_baseline_epochs", [](RunConfig& c) -> auto& { return c.schedule.n_baseline_epochs; }));
    f.push_back(int_ref<int>("m_mal_epochs", [](RunConfig& c) -> auto& { return c.schedule.m_mal_epochs; }));
    f.push_back({"dynamic_update",
                 [](const RunConfig& c) { return std::string(training::to_string(c.schedule.dynamic_update)); },
                 [](RunConfig& c, const std::string& s) {
                   try {
                     c.schedule.dynamic_update = training::parse_dynamic_update(s);
                   } catch (const Error&) {
                     throw std::invalid_argument("expected per_epoch or per_batch");
                   }
                 }});
    f.push_back(int_ref<std::size_t>("batch_size", [](RunConfig& c) -> auto& { return c.schedule.batch_size; }));
    f.push_back({"learning_rate", [](const RunConfig& c) { return eval::exact(c.schedule.learning_rate); },
                 [](RunConfig& c, const std::string& s) { c.schedule.learning_rate = parse_real(s); }});
    f.push_back(int_field("aux_clips", &RunConfig::aux_clips));
    f.push_back(int_field("aux_epochs", &RunConfig::aux_epochs));
    f.push_back(int_field("iterate_k", &RunConfig::iterate_k));
    f.push_back(int_field("iterate_clips", &RunConfig::iterate_clips));
    f.push_back(int_field("probe_clips", &RunConfig::probe_clips));
    f.push_back({"probe_snrs",
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.probe_snrs.size(); ++i) {
                     out += (i ? "," : "") + eval::exact(c.probe_snrs[i]);
                   }
                   return out;
                 },
                 [](RunConfig& c, const std::string& s) { c.probe_snrs = parse_list(s); }});
    f.push_back(int_field("n_mels", &RunConfig::n_mels));
    f.push_back(int_field("n_ceps", &RunConfig::n_ceps));
    return f;
  }();
  return all;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace config_detail

/// Parses config text. `source` names the file in error messages, which
/// carry the 1-based line number and the offending key.
inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  using namespace config_detail;
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = body.find('=');
    require(eq != std::string::npos, ErrorKind::config,
            where + ": expected 'key = value', got '" + body + "'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto it = by_key.find(key);
    require(it != by_key.end(), ErrorKind::config, where + ": unknown key '" + key + "'");
    require(seen.insert(key).second, ErrorKind::config, where + ": duplicate key '" + key + "'");
    try {
      it->second->set(c, value);
    } catch (const std::exception& e) {
      fail(ErrorKind::config,
           where + ": invalid value '" + value + "' for key '" + key + "': " + e.what());
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, source + ": " + e.what());
  }
  return c;
}

/// Every key, in a fixed order; parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const RunConfig& c) {
  std::string out = "# malkit run configuration\n";
  for (const auto& f : config_detail::fields()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::not_found,
          "config file '" + path.string() + "' not found");
  return parse_config(read_file(path), path.string());
}

}  // namespace malkit::cli
