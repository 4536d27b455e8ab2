// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "promptmt/model.hpp"

using namespace promptmt;
using namespace promptmt::model;
using pipeline::Batch;
using pipeline::EncodedExample;
using pipeline::RowMeta;

namespace {

ModelConfig tiny_config(int vocab = 12, double dropout = 0.0) {
  ModelConfig c;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.model_dim = 8;
  c.feedforward_dim = 16;
  c.heads = 2;
  c.dropout = dropout;
  c.vocab_size = vocab;
  c.max_positions = 32;
  return c;
}

// Random rows over ids 4..vocab-1, each ending in eos.
std::vector<EncodedExample> random_rows(Rng& rng, int n, int vocab, int max_len) {
  std::vector<EncodedExample> rows(n);
  for (auto& r : rows) {
    const auto ls = rng.between(1, max_len), lt = rng.between(1, max_len);
    for (int i = 0; i < ls; ++i) r.source.push_back(static_cast<int>(rng.between(4, vocab - 1)));
    for (int i = 0; i < lt; ++i) r.target.push_back(static_cast<int>(rng.between(4, vocab - 1)));
    r.source.push_back(pipeline::kEosId);
    r.target.push_back(pipeline::kEosId);
  }
  return rows;
}

Batch batch_of(const std::vector<EncodedExample>& rows) {
  std::vector<RowMeta> meta(rows.size());
  return pipeline::make_batch(rows, meta);
}

Matrix<double> random_logits(Rng& rng, int rows, int cols, double scale) {
  Matrix<double> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("label-smoothed loss matches the per-class oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = static_cast<int>(rng.between(1, 9)), v = static_cast<int>(rng.between(2, 30));
    const auto logits = random_logits(rng, n, v, 3.0);
    std::vector<int> targets(n), mask(n);
    for (int i = 0; i < n; ++i) {
      targets[i] = static_cast<int>(rng.below(v));
      mask[i] = i == 0 || rng.bernoulli(0.7);
    }
    for (double eps : {0.0, 0.1, 0.3}) {
      const auto got = label_smoothed_loss<double>(logits, targets, mask, eps);
      CHECK(std::abs(got.loss - oracle::smoothed_loss(logits, targets, mask, eps)) <= 1e-10);
    }
  }
}

TEST_CASE("uniform logits give log V for any smoothing") {
  for (int v : {2, 7, 338}) {
    const Matrix<double> logits = Matrix<double>::Constant(3, v, 0.25);
    const std::vector<int> t = {0, 1, 1}, m = {1, 1, 1};
    for (double eps : {0.0, 0.1, 0.5})
      CHECK(std::abs(label_smoothed_loss<double>(logits, t, m, eps).loss - std::log(double(v))) <= 1e-12);
  }
}

TEST_CASE("loss gradient with respect to logits") {
  Rng rng(2);
  const auto logits = random_logits(rng, 5, 6, 2.0);
  const std::vector<int> t = {0, 5, 2, 2, 1}, m = {1, 1, 0, 1, 1};
  const auto res = label_smoothed_loss<double>(logits, t, m, 0.1, true);
  REQUIRE(res.grad.rows() == 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j) {
      auto up = logits, down = logits;
      up(i, j) += 1e-6;
      down(i, j) -= 1e-6;
      const double fd = (label_smoothed_loss<double>(up, t, m, 0.1).loss -
                         label_smoothed_loss<double>(down, t, m, 0.1).loss) / 2e-6;
      CHECK(std::abs(fd - res.grad(i, j)) <= 1e-8);
    }
  CHECK(res.grad.row(2).isZero());
}

TEST_CASE("parameter layout covers the flat vector once") {
  const auto cfg = tiny_config();
  const auto layout = ParameterLayout::build(cfg);
  const int d = cfg.model_dim, f = cfg.feedforward_dim, v = cfg.vocab_size;
  const std::size_t ln = 2 * d, lin = d * d + d, ff = (d * f + f) + (f * d + d);
  const std::size_t enc = 2 * ln + 4 * lin + ff, dec = 3 * ln + 8 * lin + ff;
  // one embedding table, no separate output projection
  CHECK(layout.total == static_cast<std::size_t>(v * d) + 2 * enc + ln + 2 * dec + ln);
  CHECK(layout.embedding.rows == v);
  CHECK_THROWS_AS(ParameterLayout::build([] { auto c = tiny_config(); c.heads = 3; return c; }()), ModelError);
}

TEST_CASE("parameter gradients agree with finite differences") {
  for (double dropout : {0.0, 0.3}) {
    CAPTURE(dropout);
    Rng rng(3);
    const auto cfg = tiny_config(12, dropout);
    Transformer<double> model(cfg, 11);
    const auto batch = batch_of(random_rows(rng, 3, cfg.vocab_size, 5));
    const bool train = dropout > 0;
    Vector<double> grad = Vector<double>::Zero(model.parameter_count());
    model.forward_backward(batch, 0.1, train, 99, &grad);
    int checked = 0, failures = 0;
    for (int k = 0; k < 100; ++k) {
      const auto i = static_cast<Eigen::Index>(rng.below(model.parameter_count()));
      const double saved = model.parameters()(i);
      const double h = 1e-6;
      model.parameters()(i) = saved + h;
      const double up = model.forward_backward(batch, 0.1, train, 99, nullptr).loss;
      model.parameters()(i) = saved - h;
      const double down = model.forward_backward(batch, 0.1, train, 99, nullptr).loss;
      model.parameters()(i) = saved;
      const double fd = (up - down) / (2 * h);
      const double scale = std::max({std::abs(fd), std::abs(grad(i)), 1e-7});
      ++checked;
      if (std::abs(fd - grad(i)) / scale >= 1e-3) {
        ++failures;
        MESSAGE("coordinate " << i << ": analytic " << grad(i) << " numeric " << fd);
      }
    }
    CHECK(checked == 100);
    CHECK(failures == 0);
  }
}

TEST_CASE("padding does not change a row's logits") {
  Rng rng(4);
  const auto cfg = tiny_config(20);
  Transformer<double> model(cfg, 5);
  const auto rows = random_rows(rng, 6, cfg.vocab_size, 9);
  const auto together = model.logits(batch_of(rows));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto alone = model.logits(batch_of({rows[r]}));
    CHECK(alone[0] == together[r]);
  }
  // loss of the batch is the position-weighted mean of single-row losses
  double sum = 0;
  std::size_t positions = 0;
  for (const auto& row : rows) {
    const auto out = model.forward_backward(batch_of({row}), 0.1, false, 0, nullptr);
    sum += out.loss * static_cast<double>(out.positions);
    positions += out.positions;
  }
  const auto all = model.forward_backward(batch_of(rows), 0.1, false, 0, nullptr);
  CHECK(all.positions == positions);
  CHECK(all.loss == doctest::Approx(sum / static_cast<double>(positions)).epsilon(1e-12));
}

TEST_CASE("masked positions are never read") {
  Rng rng(6);
  const auto cfg = tiny_config(20);
  Transformer<double> model(cfg, 8);
  auto batch = batch_of(random_rows(rng, 4, cfg.vocab_size, 8));
  const auto before = model.logits(batch);
  for (int r = 0; r < batch.rows(); ++r) {
    for (int j = batch.encoder_length(r); j < batch.encoder_ids.cols(); ++j) batch.encoder_ids(r, j) = 7;
    for (int j = batch.decoder_length(r); j < batch.decoder_ids.cols(); ++j) batch.decoder_ids(r, j) = 9;
  }
  CHECK(model.logits(batch) == before);
}

TEST_CASE("decoder is causal") {
  Rng rng(7);
  const auto cfg = tiny_config(20);
  Transformer<double> model(cfg, 9);
  auto rows = random_rows(rng, 1, cfg.vocab_size, 1);
  rows[0].target = {5, 6, 7, 8, pipeline::kEosId};
  const auto a = model.logits(batch_of(rows))[0];
  rows[0].target = {5, 6, 12, 13, pipeline::kEosId};
  const auto b = model.logits(batch_of(rows))[0];
  // logits at position t see targets before t only
  CHECK(a.topRows(3) == b.topRows(3));
  CHECK(a.row(3) != b.row(3));
}

TEST_CASE("incremental decoding equals teacher forcing") {
  Rng rng(10);
  const auto cfg = tiny_config(16);
  Transformer<double> model(cfg, 12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto rows = random_rows(rng, 1, cfg.vocab_size, 7);
    const auto forced = model.logits(batch_of(rows))[0];
    const auto src = model.encode(rows[0].source);
    auto cache = model.start_cache(1);
    int prev = pipeline::kPadId;
    for (std::size_t t = 0; t < rows[0].target.size(); ++t) {
      const std::vector<int> tok = {prev};
      const auto step = model.decode_step(src, cache, tok);
      CHECK((step.row(0) - forced.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK(std::abs(step.row(0).array().exp().sum() - 1.0) <= 1e-12);
      prev = rows[0].target[t];
    }
  }
}

TEST_CASE("cache reordering follows parents") {
  const auto cfg = tiny_config(16);
  Transformer<double> model(cfg, 13);
  const std::vector<int> source = {4, 5, 6, pipeline::kEosId};
  const auto src = model.encode(source);
  auto cache = model.start_cache(2);
  model.decode_step(src, cache, std::vector<int>{pipeline::kPadId, pipeline::kPadId});
  model.decode_step(src, cache, std::vector<int>{7, 9});
  model.reorder(cache, std::vector<int>{1, 1});
  const auto out = model.decode_step(src, cache, std::vector<int>{10, 10});
  auto single = model.start_cache(1);
  model.decode_step(src, single, std::vector<int>{pipeline::kPadId});
  model.decode_step(src, single, std::vector<int>{9});
  const auto ref = model.decode_step(src, single, std::vector<int>{10});
  CHECK((out.row(0) - ref.row(0)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((out.row(1) - ref.row(0)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("shared embedding feeds the output projection") {
  const auto cfg = tiny_config(16);
  Transformer<double> model(cfg, 14);
  const std::vector<int> source = {4, 5, pipeline::kEosId};
  auto cache0 = model.start_cache(1);
  const auto before = model.decode_step(model.encode(source), cache0, std::vector<int>{pipeline::kPadId});
  // token 15 is never an input here, so only the output layer reads its row
  const auto& e = model.layout().embedding;
  model.parameters()(static_cast<Eigen::Index>(e.offset + 15 * e.cols)) += 1.0;
  auto cache = model.start_cache(1);
  const auto after = model.decode_step(model.encode(source), cache, std::vector<int>{pipeline::kPadId});
  CHECK(after(0, 15) != before(0, 15));
}

TEST_CASE("learning-rate schedule") {
  OptimizerConfig c;
  c.learning_rate = 0.01;
  c.warmup_steps = 100;
  CHECK(learning_rate_at(c, 1) == doctest::Approx(0.0001));
  CHECK(learning_rate_at(c, 50) == doctest::Approx(0.005));
  CHECK(learning_rate_at(c, 100) == doctest::Approx(0.01));
  CHECK(learning_rate_at(c, 400) == doctest::Approx(0.005));
}

TEST_CASE("optimizer clipping and non-finite gradients") {
  OptimizerConfig c;
  c.clip_norm = 1.0;
  Adam<double> adam(c, 3);
  Vector<double> p = Vector<double>::Zero(3), g(3);
  g << 3, 4, 0;
  CHECK(adam.apply(p, g) == doctest::Approx(5.0));
  CHECK(adam.state().step == 1);
  g << 1, std::numeric_limits<double>::quiet_NaN(), 0;
  CHECK_THROWS_AS(adam.apply(p, g), TrainingError);
  c.learning_rate = 0;
  CHECK_THROWS_AS(Adam<double>(c, 3), TrainingError);
}

TEST_CASE("a step at zero learning rate leaves parameters unchanged") {
  Rng rng(15);
  const auto cfg = tiny_config(16, 0.1);
  Transformer<float> model(cfg, 16);
  OptimizerConfig oc;
  oc.warmup_steps = 1;
  oc.learning_rate = 1e-300;  // positive, but zero once in float
  Adam<float> adam(oc, model.parameter_count());
  const auto before = model.parameters();
  const auto batch = batch_of(random_rows(rng, 4, cfg.vocab_size, 5));
  const auto m = train_step(model, batch, adam, 0.1, 1);
  CHECK(std::isfinite(m.loss));
  CHECK(m.grad_norm > 0);
  CHECK(model.parameters() == before);
}

TEST_CASE("lazy embeddings freeze rows absent from the batch") {
  Rng rng(23);
  const auto cfg = tiny_config(20);
  std::vector<EncodedExample> rows(3);
  for (auto& r : rows) {
    for (int i = 0; i < 4; ++i) r.source.push_back(static_cast<int>(rng.between(4, 11)));
    for (int i = 0; i < 3; ++i) r.target.push_back(static_cast<int>(rng.between(4, 11)));
    r.source.push_back(pipeline::kEosId);
    r.target.push_back(pipeline::kEosId);
  }
  const auto batch = batch_of(rows);
  OptimizerConfig oc;
  oc.warmup_steps = 1;
  oc.learning_rate = 0.01;
  Transformer<double> plain(cfg, 4), lazy(cfg, 4);
  Adam<double> a_plain(oc, plain.parameter_count());
  oc.lazy_embeddings = true;
  Adam<double> a_lazy(oc, lazy.parameter_count());
  const auto before = lazy.parameters();
  for (int s = 0; s < 3; ++s) {
    train_step(plain, batch, a_plain, 0.1, 1);
    train_step(lazy, batch, a_lazy, 0.1, 1);
  }
  const auto& e = lazy.layout().embedding;
  const auto row = [&](const Vector<double>& p, int t) { return p.segment(e.offset + t * e.cols, e.cols); };
  for (int t = 12; t < 20; ++t) {  // never in the batch
    CHECK(row(lazy.parameters(), t) == row(before, t));
    CHECK(row(a_lazy.state().second, t).isZero());
    CHECK(row(plain.parameters(), t) != row(before, t));
  }
  CHECK(row(lazy.parameters(), pipeline::kPadId) != row(before, pipeline::kPadId));
  CHECK(row(lazy.parameters(), pipeline::kEosId) != row(before, pipeline::kEosId));
  // everything outside the embedding sees the ordinary update path
  const auto tail = static_cast<Eigen::Index>(e.offset + e.size());
  CHECK(lazy.parameters().tail(lazy.parameters().size() - tail) != before.tail(before.size() - tail));
}

TEST_CASE("training overfits a handful of pairs") {
  Rng rng(17);
  const auto cfg = tiny_config(16);
  Transformer<float> model([&] {
    auto c = cfg;
    c.model_dim = 16;
    c.feedforward_dim = 32;
    return c;
  }(), 18);
  OptimizerConfig oc;
  oc.learning_rate = 0.01;
  oc.warmup_steps = 20;
  Adam<float> adam(oc, model.parameter_count());
  const auto batch = batch_of(random_rows(rng, 4, cfg.vocab_size, 4));
  const double first = model.forward_backward(batch, 0.0, false, 0, nullptr).loss;
  for (int s = 0; s < 300; ++s) train_step(model, batch, adam, 0.0, static_cast<std::uint64_t>(s));
  const double last = model.forward_backward(batch, 0.0, false, 0, nullptr).loss;
  CHECK(last < 0.05);
  CHECK(last < first);
}

TEST_CASE("checkpoint round trip resumes identically") {
  Rng rng(19);
  const auto cfg = tiny_config(16, 0.1);
  Transformer<float> model(cfg, 20);
  Adam<float> adam(OptimizerConfig{}, model.parameter_count());
  const auto batch = batch_of(random_rows(rng, 3, cfg.vocab_size, 5));
  for (int s = 0; s < 3; ++s) train_step(model, batch, adam, 0.1, static_cast<std::uint64_t>(s));
  pipeline::Vocabulary vocab;
  for (int i = 4; i < 16; ++i) vocab.add("t" + std::to_string(i));
  const auto dir = (std::filesystem::temp_directory_path() / "promptmt_ckpt").string();
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, model, adam, 3, vocab);
  const auto ck = load_checkpoint(dir);
  CHECK(ck.parameters == model.parameters());
  CHECK(ck.adam.first == adam.state().first);
  CHECK(ck.adam.second == adam.state().second);
  CHECK(ck.adam.step == adam.state().step);
  CHECK(ck.step == 3);
  CHECK(ck.vocab_fingerprint == vocab.fingerprint());
  CHECK(ck.config.fingerprint() == cfg.fingerprint());
  CHECK(pipeline::Vocabulary::load(dir + "/vocab.txt").fingerprint() == vocab.fingerprint());

  Transformer<float> resumed(ck.config, ck.parameters);
  Adam<float> adam2(ck.optimizer, resumed.parameter_count());
  adam2.state() = ck.adam;
  train_step(model, batch, adam, 0.1, 3);
  train_step(resumed, batch, adam2, 0.1, 3);
  CHECK(resumed.parameters() == model.parameters());

  std::filesystem::resize_file(dir + "/params.bin", 8);
  CHECK_THROWS_AS(load_checkpoint(dir), ModelError);
  CHECK_THROWS_AS(load_checkpoint(dir + "/missing"), ModelError);
}

TEST_CASE("float and double models agree") {
  Rng rng(21);
  const auto cfg = tiny_config(16);
  Transformer<double> d(cfg, 22);
  const auto f = d.cast<float>();
  const auto batch = batch_of(random_rows(rng, 2, cfg.vocab_size, 5));
  const double a = d.forward_backward(batch, 0.1, false, 0, nullptr).loss;
  const double b = f.forward_backward(batch, 0.1, false, 0, nullptr).loss;
  CHECK(a == doctest::Approx(b).epsilon(1e-5));
}
