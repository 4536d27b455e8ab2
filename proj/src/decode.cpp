// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptmt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace promptmt::decode {

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

bool ranks_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

PrefixSession::PrefixSession(int vocab_size, Scorer scorer, int eos)
    : vocab_(vocab_size), scorer_(std::move(scorer)), eos_(eos) {
  if (vocab_ < 1) throw DecodeError("vocabulary must be nonempty");
  if (eos_ < 0 || eos_ >= vocab_) throw DecodeError("eos id outside the vocabulary");
}

Eigen::MatrixXd PrefixSession::score_all() {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(prefixes_.size()), vocab_);
  for (std::size_t i = 0; i < prefixes_.size(); ++i) {
    Eigen::VectorXd row = scorer_(prefixes_[i]);
    if (row.size() != vocab_) throw DecodeError("scorer returned the wrong number of log-probabilities");
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

Eigen::MatrixXd PrefixSession::start() {
  prefixes_.assign(1, {});
  return score_all();
}

Eigen::MatrixXd PrefixSession::step(std::span<const int> parents, std::span<const int> tokens) {
  std::vector<std::vector<int>> next;
  for (std::size_t i = 0; i < parents.size(); ++i) {
    auto p = prefixes_.at(parents[i]);
    p.push_back(tokens[i]);
    next.push_back(std::move(p));
  }
  prefixes_ = std::move(next);
  return score_all();
}

template <typename Scalar>
TransformerSession<Scalar>::TransformerSession(const model::Transformer<Scalar>& model,
                                               std::span<const int> input)
    : model_(model), source_(model.encode(input)) {}

template <typename Scalar>
Eigen::MatrixXd TransformerSession<Scalar>::finish(const model::Matrix<Scalar>& logprobs) const {
  Eigen::MatrixXd out = logprobs.template cast<double>();
  out.col(pipeline::kPadId).setConstant(-std::numeric_limits<double>::infinity());
  return out;
}

template <typename Scalar>
Eigen::MatrixXd TransformerSession<Scalar>::start() {
  cache_ = model_.start_cache(1);
  const int pad[1] = {pipeline::kPadId};
  return finish(model_.decode_step(source_, cache_, pad));
}

template <typename Scalar>
Eigen::MatrixXd TransformerSession<Scalar>::step(std::span<const int> parents, std::span<const int> tokens) {
  model_.reorder(cache_, parents);
  return finish(model_.decode_step(source_, cache_, tokens));
}

template class TransformerSession<float>;
template class TransformerSession<double>;

namespace {

struct Live {
  std::vector<int> tokens;
  double logprob = 0.0;
};

struct Candidate {
  double logprob;
  int parent;
  int token;
};

}  // namespace

std::vector<Hypothesis> beam_search(ScoringSession& session, const pipeline::DecodeConfig& config) {
  if (config.beam_size < 1) throw DecodeError("beam_size must be at least 1");
  if (config.length_penalty_alpha < 0.0) throw DecodeError("length penalty alpha must be nonnegative");
  if (config.max_decode_len < 1) throw DecodeError("max_decode_len must be at least 1");
  const auto beam = static_cast<std::size_t>(config.beam_size);
  const double alpha = config.length_penalty_alpha;
  const int eos = session.eos();
  auto score_of = [&](double lp, std::size_t n) { return lp / length_penalty(n, alpha); };

  std::vector<Live> live(1);
  std::vector<Hypothesis> finished;
  Eigen::MatrixXd logprobs = session.start();

  for (int t = 1; t <= config.max_decode_len; ++t) {
    std::vector<Candidate> cands;
    cands.reserve(live.size() * static_cast<std::size_t>(logprobs.cols()));
    for (std::size_t b = 0; b < live.size(); ++b) {
      for (Eigen::Index v = 0; v < logprobs.cols(); ++v) {
        const double lp = logprobs(static_cast<Eigen::Index>(b), v);
        if (lp == -std::numeric_limits<double>::infinity()) continue;
        cands.push_back({live[b].logprob + lp, static_cast<int>(b), static_cast<int>(v)});
      }
    }
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.token != b.token) return a.token < b.token;
      return live[a.parent].tokens < live[b.parent].tokens;
    });

    std::vector<Live> next;
    std::vector<int> parents, tokens;
    const bool last = t == config.max_decode_len;
    for (const auto& c : cands) {
      if (next.size() >= beam) break;
      auto seq = live[c.parent].tokens;
      seq.push_back(c.token);
      if (c.token == eos) {
        finished.push_back({seq, c.logprob, score_of(c.logprob, seq.size()), true});
      } else {
        next.push_back({std::move(seq), c.logprob});
        parents.push_back(c.parent);
        tokens.push_back(c.token);
      }
    }
    std::sort(finished.begin(), finished.end(), ranks_before);
    if (finished.size() > beam) finished.resize(beam);

    if (next.empty()) break;
    if (last) {
      if (finished.empty()) {
        // Nothing ended within the limit: report the best cut prefix.
        std::vector<Hypothesis> cut;
        for (const auto& l : next) cut.push_back({l.tokens, l.logprob, score_of(l.logprob, l.tokens.size()), false});
        std::sort(cut.begin(), cut.end(), ranks_before);
        return {cut.front()};
      }
      break;
    }
    if (finished.size() >= beam) {
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& l : next) best_live = std::max(best_live, score_of(l.logprob, l.tokens.size()));
      if (best_live <= finished.back().score) break;
    }
    live = std::move(next);
    logprobs = session.step(parents, tokens);
  }
  if (finished.empty()) throw DecodeError("the scorer proposed no finite continuation");
  return finished;
}

Hypothesis greedy(ScoringSession& session, int max_len, double alpha) {
  if (max_len < 1) throw DecodeError("max_len must be at least 1");
  Hypothesis h;
  h.finished = false;
  Eigen::MatrixXd logprobs = session.start();
  for (int t = 0; t < max_len; ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index v = 1; v < logprobs.cols(); ++v)
      if (logprobs(0, v) > logprobs(0, best)) best = v;
    if (logprobs(0, best) == -std::numeric_limits<double>::infinity()) {
      throw DecodeError("the scorer proposed no finite continuation");
    }
    h.tokens.push_back(static_cast<int>(best));
    h.logprob += logprobs(0, best);
    if (best == session.eos()) {
      h.finished = true;
      break;
    }
    if (t + 1 < max_len) {
      const int parent[1] = {0};
      const int tok[1] = {static_cast<int>(best)};
      logprobs = session.step(parent, tok);
    }
  }
  h.score = h.logprob / length_penalty(h.tokens.size(), alpha);
  return h;
}

}  // namespace promptmt::decode
