#pragma once

// Metric records, their CSV/summary serialization, and the drift outputs.
// All writers sort their rows first so output bytes depend only on content.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "malkit/binary_io.hpp"
#include "malkit/datagen/dataset.hpp"
#include "malkit/eval/iterate.hpp"
#include "malkit/eval/metrics.hpp"
#include "malkit/parallel.hpp"

namespace malkit::eval {

struct MetricRecord {
  std::string clip_id;
  std::string split;
  std::string model_tag;
  std::string metric;
  double value = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

inline const std::vector<std::string> kMetricNames{"lsd", "mcd", "si_sdr", "spectral_l1"};

/// Shortest text that parses back to the same double.
inline std::string exact(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Metrics of the enhanced clip against clean. With params == nullptr the
/// noisy input itself is scored, which gives the unprocessed reference row.
inline std::vector<MetricRecord> evaluate_clips(const model::ModelParams* params,
                                                const std::vector<datagen::ClipPair>& clips,
                                                const std::string& model_tag,
                                                const MetricConfig& cfg = {}) {
  std::vector<std::vector<MetricRecord>> per_clip(clips.size());
  parallel_for(clips.size(), [&](std::size_t i) {
    const auto& c = clips[i];
    const dsp::Waveform est = params ? model::enhance(*params, c.noisy) : c.noisy;
    const double values[] = {lsd(c.clean, est, cfg), mcd(c.clean, est, cfg),
                             si_sdr(c.clean, est), spectral_l1(c.clean, est, cfg)};
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
      require(std::isfinite(values[m]), ErrorKind::numeric,
              "evaluate: non-finite " + kMetricNames[m] + " on clip " + c.id);
      per_clip[i].push_back(
          {c.id, std::string(datagen::to_string(c.split)), model_tag, kMetricNames[m], values[m]});
    }
  });
  std::vector<MetricRecord> out;
  for (auto& v : per_clip) out.insert(out.end(), v.begin(), v.end());
  return out;
}

inline void sort_records(std::vector<MetricRecord>& r) {
  std::stable_sort(r.begin(), r.end(), [](const MetricRecord& a, const MetricRecord& b) {
    return std::tie(a.model_tag, a.split, a.metric, a.clip_id) <
           std::tie(b.model_tag, b.split, b.metric, b.clip_id);
  });
}

struct SummaryRow {
  std::string model_tag;
  std::string split;
  std::string metric;
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
};

inline std::vector<SummaryRow> summarize(std::vector<MetricRecord> records) {
  sort_records(records);
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : records) groups[{r.model_tag, r.split, r.metric}].push_back(r.value);
  std::vector<SummaryRow> out;
  for (const auto& [key, values] : groups) {
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), values.size(),
                   mean(values), median(values)});
  }
  return out;
}

inline const char* kMetricsHeader = "clip_id,split,model_tag,metric,value\n";
inline const char* kSummaryHeader = "model_tag,split,metric,count,mean,median\n";

inline std::string metrics_csv(std::vector<MetricRecord> records) {
  sort_records(records);
  std::string out = kMetricsHeader;
  for (const auto& r : records) {
    require(std::isfinite(r.value), ErrorKind::numeric,
            "report: non-finite " + r.metric + " for clip " + r.clip_id);
    out += r.clip_id + "," + r.split + "," + r.model_tag + "," + r.metric + "," + exact(r.value) +
           "\n";
  }
  return out;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = kSummaryHeader;
  for (const auto& s : rows) {
    out += s.model_tag + "," + s.split + "," + s.metric + "," + std::to_string(s.count) + "," +
           exact(s.mean) + "," + exact(s.median) + "\n";
  }
  return out;
}

/// <stem>_summary.csv next to the metrics file.
inline std::filesystem::path summary_path(const std::filesystem::path& metrics_path) {
  auto p = metrics_path;
  p.replace_filename(metrics_path.stem().string() + "_summary.csv");
  return p;
}

/// Writes the metrics CSV and its per-split summary; returns the summary.
inline std::vector<SummaryRow> report(const std::vector<MetricRecord>& records,
                                      const std::filesystem::path& out_path) {
  const auto summary = summarize(records);
  write_file(out_path, metrics_csv(records));
  write_file(summary_path(out_path), summary_csv(summary));
  return summary;
}

inline std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  require(line + "\n" == kMetricsHeader, ErrorKind::format,
          path.string() + ": not a metrics CSV (header '" + line + "')");
  std::vector<MetricRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    require(f.size() == 5, ErrorKind::format,
            path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    char* end = nullptr;
    const double v = std::strtod(f[4].c_str(), &end);
    require(end && *end == '\0' && !f[4].empty(), ErrorKind::format,
            path.string() + ":" + std::to_string(lineno) + ": bad value '" + f[4] + "'");
    out.push_back({f[0], f[1], f[2], f[3], v});
  }
  return out;
}

// ---------------------------------------------------------------------------

struct DriftRecord {
  std::string clip_id;
  std::string model_tag;
  DriftCurve curve;
};

inline std::string drift_csv(std::vector<DriftRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.model_tag, a.clip_id) < std::tie(b.model_tag, b.clip_id);
  });
  std::string out = "clip_id,model_tag,k,si_sdr,drift\n";
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.curve.size(); ++i) {
      out += r.clip_id + "," + r.model_tag + "," + std::to_string(r.curve.k[i]) + "," +
             (r.curve.si_sdr.empty() ? std::string() : exact(r.curve.si_sdr[i])) + "," +
             exact(r.curve.drift[i]) + "\n";
    }
  }
  return out;
}

/// Per model tag: mean over clips of each curve position.
inline std::map<std::string, DriftCurve> mean_curves(const std::vector<DriftRecord>& records) {
  std::map<std::string, std::vector<const DriftCurve*>> by_tag;
  for (const auto& r : records) by_tag[r.model_tag].push_back(&r.curve);
  std::map<std::string, DriftCurve> out;
  for (const auto& [tag, curves] : by_tag) {
    DriftCurve m;
    const std::size_t K = curves.front()->size();
    const bool has_sdr = !curves.front()->si_sdr.empty();
    for (std::size_t i = 0; i < K; ++i) {
      double d = 0.0, s = 0.0;
      for (const auto* c : curves) {
        require(c->size() == K, ErrorKind::precondition, "mean_curves: ragged curves");
        d += c->drift[i];
        if (has_sdr) s += c->si_sdr[i];
      }
      m.k.push_back(curves.front()->k[i]);
      m.drift.push_back(d / static_cast<double>(curves.size()));
      if (has_sdr) m.si_sdr.push_back(s / static_cast<double>(curves.size()));
    }
    out[tag] = std::move(m);
  }
  return out;
}

/// Two stacked line charts (mean SI-SDR and mean log10 drift vs k), one
/// polyline per model tag.
inline std::string drift_svg(const std::vector<DriftRecord>& records) {
  const auto curves = mean_curves(records);
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  const double W = 640, H = 220, pad = 40;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\""
      << 2 * H + 30 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  auto panel = [&](double y0, const std::string& title, auto value_of) {
    double lo = 1e300, hi = -1e300, kmax = 1;
    for (const auto& [tag, c] : curves) {
      for (std::size_t i = 0; i < c.size(); ++i) {
        const double v = value_of(c, i);
        if (!std::isfinite(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        kmax = std::max(kmax, static_cast<double>(c.k[i]));
      }
    }
    if (lo > hi) lo = hi = 0.0;
    if (hi - lo < 1e-12) hi = lo + 1.0;
    svg << "<text x=\"" << pad << "\" y=\"" << y0 + 14 << "\">" << title << " ["
        << exact(lo) << ", " << exact(hi) << "]</text>\n";
    svg << "<rect x=\"" << pad << "\" y=\"" << y0 + 20 << "\" width=\"" << W - 2 * pad
        << "\" height=\"" << H - 40 << "\" fill=\"none\" stroke=\"#999\"/>\n";
    std::size_t ci = 0;
    for (const auto& [tag, c] : curves) {
      svg << "<polyline fill=\"none\" stroke=\"" << colors[ci % 8] << "\" points=\"";
      for (std::size_t i = 0; i < c.size(); ++i) {
        const double v = value_of(c, i);
        if (!std::isfinite(v)) continue;
        const double x = pad + (W - 2 * pad) * (kmax > 1 ? (c.k[i] - 1) / (kmax - 1) : 0.0);
        const double y = y0 + 20 + (H - 40) * (1.0 - (v - lo) / (hi - lo));
        svg << exact(std::round(x * 100) / 100) << "," << exact(std::round(y * 100) / 100) << " ";
      }
      svg << "\"/>\n<text x=\"" << W - pad + 4 - 120 << "\" y=\"" << y0 + 34 + 12 * ci
          << "\" fill=\"" << colors[ci % 8] << "\">" << tag << "</text>\n";
      ++ci;
    }
  };
  panel(0, "mean SI-SDR to clean (dB) vs k", [](const DriftCurve& c, std::size_t i) {
    return c.si_sdr.empty() ? std::nan("") : c.si_sdr[i];
  });
  panel(H + 10, "mean log10 relative drift vs k", [](const DriftCurve& c, std::size_t i) {
    return c.drift[i] > 0 ? std::log10(c.drift[i]) : std::nan("");
  });
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace malkit::eval
