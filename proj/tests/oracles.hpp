// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

// Slow, independent reference implementations used as test oracles. None of
// them call the code they check beyond tokenization.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "promptmt/decode.hpp"
#include "promptmt/eval.hpp"
#include "promptmt/ingest.hpp"
#include "promptmt/model.hpp"

namespace oracle {

struct Bleu {
  double score = 0.0;
  double bp = 0.0;
  std::vector<double> precisions;
};

/// Corpus BLEU by direct n-gram enumeration with exp smoothing.
inline Bleu bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  std::vector<double> correct(4, 0.0), total(4, 0.0);
  double hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto h = promptmt::eval::tokenize_13a(hyps[s]);
    const auto r = promptmt::eval::tokenize_13a(refs[s]);
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, int> hc, rc;
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hc[{h.begin() + i, h.begin() + i + n}];
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++rc[{r.begin() + i, r.begin() + i + n}];
      for (const auto& [g, c] : hc) {
        total[n - 1] += c;
        auto it = rc.find(g);
        if (it != rc.end()) correct[n - 1] += std::min(c, it->second);
      }
    }
  }
  Bleu out;
  double k = 1.0;
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < 4; ++n) {
    double p;
    if (total[n] == 0) {
      p = 0.0;
    } else if (correct[n] == 0) {
      k *= 2.0;
      p = 1.0 / (k * total[n]);
    } else {
      p = correct[n] / total[n];
    }
    out.precisions.push_back(p);
    if (p <= 0.0) zero = true; else log_sum += std::log(p);
  }
  out.bp = hyp_len == 0 ? 0.0 : (hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0);
  out.score = zero ? 0.0 : 100.0 * out.bp * std::exp(log_sum / 4.0);
  return out;
}

/// Label-smoothed cross-entropy by summing over every class.
inline double smoothed_loss(const promptmt::model::Matrix<double>& logits, const std::vector<int>& targets,
                            const std::vector<int>& mask, double eps) {
  double total = 0.0;
  int valid = 0;
  const auto v = logits.cols();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    ++valid;
    double z = 0.0;
    for (Eigen::Index k = 0; k < v; ++k) z += std::exp(logits(i, k));
    for (Eigen::Index k = 0; k < v; ++k) {
      const double q = (k == targets[i] ? 1.0 - eps : 0.0) + eps / static_cast<double>(v);
      total += -q * std::log(std::exp(logits(i, k)) / z);
    }
  }
  return total / valid;
}

/// Every sequence of non-eos tokens of length 0..max_len-1 followed by eos,
/// scored by the prefix scorer; sorted in result order.
inline std::vector<promptmt::decode::Hypothesis> enumerate(int vocab, int eos, int max_len, double alpha,
                                                           const promptmt::decode::PrefixSession::Scorer& scorer) {
  std::vector<promptmt::decode::Hypothesis> out;
  std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix, double lp) {
    const Eigen::VectorXd next = scorer(prefix);
    {
      auto seq = prefix;
      seq.push_back(eos);
      const double total = lp + next(eos);
      out.push_back({seq, total, total / std::pow((5.0 + seq.size()) / 6.0, alpha), true});
    }
    if (static_cast<int>(prefix.size()) + 1 >= max_len) return;
    for (int t = 0; t < vocab; ++t) {
      if (t == eos) continue;
      prefix.push_back(t);
      walk(prefix, lp + next(t));
      prefix.pop_back();
    }
  };
  std::vector<int> empty;
  walk(empty, 0.0);
  std::sort(out.begin(), out.end(), promptmt::decode::ranks_before);
  return out;
}

/// Character-trigram naive Bayes decision, recomputed from raw counts.
class NaiveBayes {
 public:
  NaiveBayes(const std::map<std::string, std::vector<std::string>>& corpora, int order, double alpha)
      : order_(order), alpha_(alpha) {
    std::set<std::string> space;
    for (const auto& [lang, texts] : corpora) {
      auto& c = counts_[lang];
      for (const auto& t : texts)
        for (const auto& g : grams(t)) {
          c[g] += 1.0;
          totals_[lang] += 1.0;
          space.insert(g);
        }
    }
    types_ = static_cast<double>(space.size()) + 1.0;
  }

  double posterior(const std::string& text, const std::string& lang) const {
    std::map<std::string, double> ll;
    for (const auto& [l, c] : counts_) {
      double s = 0.0;
      for (const auto& g : grams(text)) {
        auto it = c.find(g);
        const double n = it == c.end() ? 0.0 : it->second;
        s += std::log((n + alpha_) / (totals_.at(l) + alpha_ * types_));
      }
      ll[l] = s;
    }
    double mx = -INFINITY;
    for (const auto& [l, s] : ll) mx = std::max(mx, s);
    double z = 0.0;
    for (const auto& [l, s] : ll) z += std::exp(s - mx);
    return std::exp(ll.at(lang) - mx) / z;
  }

 private:
  std::vector<std::string> grams(const std::string& text) const {
    std::string squeezed;
    for (const auto& w : promptmt::split_whitespace(text)) squeezed += (squeezed.empty() ? "" : " ") + w;
    const std::string padded = " " + squeezed + " ";
    std::vector<std::string> out;
    for (std::size_t i = 0; i + order_ <= padded.size(); ++i) out.push_back(padded.substr(i, order_));
    return out;
  }

  std::size_t order_;
  double alpha_;
  double types_ = 1.0;
  std::map<std::string, std::map<std::string, double>> counts_;
  std::map<std::string, double> totals_;
};

}  // namespace oracle
