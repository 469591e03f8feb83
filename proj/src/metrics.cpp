#include "gradprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <utility>

#include "gradprobe/format.hpp"
#include "gradprobe/tensor.hpp"

namespace gradprobe {

namespace {

// (score, is_unfamiliar) sorted by score ascending.
std::vector<std::pair<double, bool>> pooled(const DetectionScoreSet& s) {
  s.validate();
  std::vector<std::pair<double, bool>> all;
  all.reserve(s.unfamiliar.size() + s.familiar.size());
  for (double v : s.unfamiliar) all.emplace_back(v, true);
  for (double v : s.familiar) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return all;
}

}  // namespace

void DetectionScoreSet::validate() const {
  if (unfamiliar.empty() || familiar.empty())
    throw Error("detection scores need both unfamiliar and familiar samples");
  for (double v : unfamiliar)
    if (!std::isfinite(v)) throw Error("non-finite unfamiliar score");
  for (double v : familiar)
    if (!std::isfinite(v)) throw Error("non-finite familiar score");
}

double auroc(const DetectionScoreSet& s) {
  const auto all = pooled(s);
  // Sum of 1-based ranks of the unfamiliar scores, with tied runs sharing the
  // mean rank. Doubled to stay in integers.
  double rank_sum2 = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t pos = 0;
    while (j < all.size() && all[j].first == all[i].first) pos += all[j++].second;
    rank_sum2 += static_cast<double>(pos) * static_cast<double>(i + 1 + j);
    i = j;
  }
  const auto np = static_cast<double>(s.unfamiliar.size());
  const auto nn = static_cast<double>(s.familiar.size());
  const double u = rank_sum2 / 2.0 - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

double aupr(const DetectionScoreSet& s) {
  const auto all = pooled(s);
  const auto positives = static_cast<double>(s.unfamiliar.size());
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, area = 0.0;
  for (std::size_t j = all.size(); j > 0;) {
    const double score = all[j - 1].first;
    while (j > 0 && all[j - 1].first == score) {
      (all[j - 1].second ? tp : fp) += 1.0;
      --j;
    }
    const double recall = tp / positives;
    if (recall > prev_recall) area += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return area;
}

double detection_accuracy(const DetectionScoreSet& s) {
  const auto all = pooled(s);
  const auto np = static_cast<double>(s.unfamiliar.size());
  const auto nn = static_cast<double>(s.familiar.size());
  // Threshold above every score: nothing flagged, TPR 0 and TNR 1.
  double best = 0.5;
  double tp = 0.0, tn = nn;
  for (std::size_t j = all.size(); j > 0;) {
    const double score = all[j - 1].first;
    while (j > 0 && all[j - 1].first == score) {
      if (all[j - 1].second)
        tp += 1.0;
      else
        tn -= 1.0;
      --j;
    }
    best = std::max(best, 0.5 * (tp / np + tn / nn));
  }
  return best;
}

MetricRow evaluate(std::string method, std::string in_dataset, std::string out_dataset,
                   const DetectionScoreSet& s) {
  return {std::move(method), std::move(in_dataset), std::move(out_dataset),
          detection_accuracy(s), auroc(s), aupr(s)};
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "method,in_dataset,out_dataset,detection_accuracy,auroc,aupr\n";
  for (const auto& r : rows)
    out += r.method + "," + r.in_dataset + "," + r.out_dataset + "," +
           format_double(r.detection_accuracy) + "," + format_double(r.auroc) + "," +
           format_double(r.aupr) + "\n";
  return out;
}

std::string metrics_table(const std::vector<MetricRow>& rows) {
  std::size_t wm = 6, wi = 2, wo = 3;
  for (const auto& r : rows) {
    wm = std::max(wm, r.method.size());
    wi = std::max(wi, r.in_dataset.size());
    wo = std::max(wo, r.out_dataset.size());
  }
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  std::string out = pad("method", wm) + "  " + pad("in", wi) + "  " + pad("out", wo) +
                    "  det_acc   auroc    aupr\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "  %7.2f  %7.2f  %7.2f\n", 100 * r.detection_accuracy,
                  100 * r.auroc, 100 * r.aupr);
    out += pad(r.method, wm) + "  " + pad(r.in_dataset, wi) + "  " + pad(r.out_dataset, wo) + buf;
  }
  return out;
}

}  // namespace gradprobe
