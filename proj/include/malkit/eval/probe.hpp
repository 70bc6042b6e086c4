#pragma once

// SNR-rule probe: embedding distance between a clean clip and its mixture
// should grow as the SNR falls, i.e. rank-correlate negatively with SNR.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "malkit/autodiff/ops.hpp"
#include "malkit/datagen/dataset.hpp"
#include "malkit/eval/iterate.hpp"
#include "malkit/model/model.hpp"
#include "malkit/parallel.hpp"

namespace malkit::eval {

inline const std::vector<double> kProbeSnrs{20.0, 10.0, 0.0, -5.0};

/// 1-based ranks; tied values share the average of their ranks.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Pearson correlation of average ranks. A constant input has no ranking
/// and yields 0.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::precondition,
          "spearman: need two paired samples of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct ProbeRow {
  std::string clip_id;
  double snr_db = 0.0;
  double distance = 0.0;
};

struct ProbeResult {
  std::vector<ProbeRow> rows;       // clip-major, SNRs in the given order
  std::vector<double> clip_rho;     // per clip
  double mean_rho = 0.0;
};

/// For every clip the noise is recovered as noisy - clean and remixed at
/// each probe SNR; distance is the mean L1 between bottleneck embeddings of
/// the clean clip and the remix.
inline ProbeResult probe_snr_rule(const model::EncoderStack& encoder,
                                  const model::ModelConfig& config,
                                  const std::vector<datagen::ClipPair>& clips,
                                  const std::vector<double>& snrs = kProbeSnrs) {
  require(snrs.size() >= 2, ErrorKind::precondition,
          "probe_snr_rule: need at least 2 SNR points, got " + std::to_string(snrs.size()));
  require(!clips.empty(), ErrorKind::precondition, "probe_snr_rule: no clips");
  std::vector<std::vector<double>> dist(clips.size());
  parallel_for(clips.size(), [&](std::size_t i) {
    const auto& c = clips[i];
    dsp::Waveform noise = c.noisy;
    for (std::size_t t = 0; t < noise.size(); ++t) noise.samples[t] -= c.clean.samples[t];
    const auto ref = model::embed_waveform(encoder, config, c.clean);
    for (double snr : snrs) {
      const auto mixed = dsp::mix_at_snr(c.clean, noise, snr);
      dist[i].push_back(ad::mean_l1(ref, model::embed_waveform(encoder, config, mixed)).item());
    }
  });
  ProbeResult out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    for (std::size_t s = 0; s < snrs.size(); ++s) {
      out.rows.push_back({clips[i].id, snrs[s], dist[i][s]});
    }
    out.clip_rho.push_back(spearman(dist[i], snrs));
  }
  out.mean_rho = mean(out.clip_rho);
  return out;
}

}  // namespace malkit::eval
