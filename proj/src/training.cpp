// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include "json.hpp"

#include "promptmt/model.hpp"

namespace promptmt::model {

double learning_rate_at(const OptimizerConfig& c, long long step) {
  const double s = static_cast<double>(std::max<long long>(step, 1));
  if (c.warmup_steps <= 0) return c.learning_rate / std::sqrt(s);
  const double w = static_cast<double>(c.warmup_steps);
  return c.learning_rate * std::min(s / w, std::sqrt(w / s));
}

template <typename Scalar>
Adam<Scalar>::Adam(OptimizerConfig config, std::size_t parameter_count) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw TrainingError("learning_rate must be positive");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw TrainingError("Adam betas must be in [0,1)");
  }
  const auto n = static_cast<Eigen::Index>(parameter_count);
  state_.first = Vector<Scalar>::Zero(n);
  state_.second = Vector<Scalar>::Zero(n);
}

template <typename Scalar>
double Adam<Scalar>::apply(Vector<Scalar>& params, Vector<Scalar>& grad, const Vector<Scalar>* active) {
  if (grad.size() != params.size() || state_.first.size() != params.size() ||
      (active && active->size() != params.size())) {
    throw TrainingError("optimizer, parameters and gradient disagree in size");
  }
  const double norm = std::sqrt(static_cast<double>(grad.template cast<double>().squaredNorm()));
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient");
  if (config_.clip_norm > 0.0 && norm > config_.clip_norm) {
    grad *= static_cast<Scalar>(config_.clip_norm / norm);
  }
  ++state_.step;
  const double lr = learning_rate_at(config_, state_.step);
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
  const Scalar step = static_cast<Scalar>(lr / c1);
  const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2);
  const Scalar eps = static_cast<Scalar>(config_.epsilon);
  if (!active) {
    state_.first = Scalar(b1) * state_.first + Scalar(1.0 - b1) * grad;
    state_.second = Scalar(b2) * state_.second + Scalar(1.0 - b2) * grad.cwiseAbs2();
    params.array() -= step * state_.first.array() / ((state_.second.array() * inv_c2).sqrt() + eps);
    return norm;
  }
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    if ((*active)(i) == Scalar(0)) continue;
    state_.first(i) = Scalar(b1) * state_.first(i) + Scalar(1.0 - b1) * grad(i);
    state_.second(i) = Scalar(b2) * state_.second(i) + Scalar(1.0 - b2) * grad(i) * grad(i);
    params(i) -= step * state_.first(i) / (std::sqrt(state_.second(i) * inv_c2) + eps);
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;

template <typename Scalar>
StepMetrics train_step(Transformer<Scalar>& model, const pipeline::Batch& batch, Adam<Scalar>& optimizer,
                       double smoothing, std::uint64_t dropout_seed) {
  Vector<Scalar> grad = Vector<Scalar>::Zero(static_cast<Eigen::Index>(model.parameter_count()));
  const auto out = model.forward_backward(batch, smoothing, true, dropout_seed, &grad);
  if (!std::isfinite(out.loss)) throw TrainingError("loss diverged to a non-finite value");
  StepMetrics m;
  m.loss = out.loss;
  if (optimizer.config().lazy_embeddings) {
    const auto& e = model.layout().embedding;
    Vector<Scalar> active = Vector<Scalar>::Ones(grad.size());
    std::vector<char> seen(static_cast<std::size_t>(e.rows), 0);
    const auto mark = [&](const Eigen::MatrixXi& ids, const Eigen::MatrixXi& mask) {
      for (Eigen::Index r = 0; r < ids.rows(); ++r)
        for (Eigen::Index c = 0; c < ids.cols(); ++c)
          if (mask(r, c)) seen[static_cast<std::size_t>(ids(r, c))] = 1;
    };
    mark(batch.encoder_ids, batch.encoder_mask);
    mark(batch.decoder_ids, batch.decoder_mask);
    seen[pipeline::kPadId] = 1;  // decoder start symbol
    for (Eigen::Index t = 0; t < e.rows; ++t) {
      if (seen[static_cast<std::size_t>(t)]) continue;
      const auto off = static_cast<Eigen::Index>(e.offset) + t * e.cols;
      active.segment(off, e.cols).setZero();
      grad.segment(off, e.cols).setZero();
    }
    m.grad_norm = optimizer.apply(model.parameters(), grad, &active);
  } else {
    m.grad_norm = optimizer.apply(model.parameters(), grad);
  }
  m.learning_rate = learning_rate_at(optimizer.config(), optimizer.state().step);
  return m;
}

template StepMetrics train_step<float>(Transformer<float>&, const pipeline::Batch&, Adam<float>&, double,
                                       std::uint64_t);
template StepMetrics train_step<double>(Transformer<double>&, const pipeline::Batch&, Adam<double>&, double,
                                        std::uint64_t);

void TrainConfig::validate() const {
  if (steps < 0) throw TrainingError("steps must be nonnegative");
  if (eval_every < 0) throw TrainingError("eval_every must be nonnegative");
  if (batch_size < 1) throw TrainingError("batch_size must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw TrainingError("label_smoothing must be in [0,1)");
  }
}

StageResult run_stage(Transformer<float>& model, Adam<float>& optimizer, const BatchSource& batches,
                      const TrainConfig& config, const Evaluator& evaluate, const CheckpointHook& checkpoint,
                      const StepHook& on_step) {
  config.validate();
  StageResult result;
  for (int step = 1; step <= config.steps; ++step) {
    const auto batch = batches();
    const auto m = train_step(model, batch, optimizer, config.label_smoothing,
                              derive_seed(config.seed, static_cast<std::uint64_t>(step)));
    result.steps.push_back(m);
    if (on_step) on_step(step, m);
    const bool boundary = config.eval_every > 0 && (step % config.eval_every == 0 || step == config.steps);
    if (boundary) {
      if (evaluate) {
        auto pts = evaluate(model, step);
        result.curve.insert(result.curve.end(), pts.begin(), pts.end());
      }
      if (checkpoint) checkpoint(model, optimizer, step);
    }
  }
  return result;
}

namespace {

namespace fs = std::filesystem;

void write_floats(const fs::path& path, std::initializer_list<const Vector<float>*> blocks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write '" + path.string() + "'");
  for (const auto* b : blocks) {
    out.write(reinterpret_cast<const char*>(b->data()), static_cast<std::streamsize>(b->size() * sizeof(float)));
  }
  if (!out) throw ModelError("write failed for '" + path.string() + "'");
}

void read_floats(const fs::path& path, std::initializer_list<Vector<float>*> blocks) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot read '" + path.string() + "'");
  std::size_t expected = 0;
  for (auto* b : blocks) expected += static_cast<std::size_t>(b->size()) * sizeof(float);
  if (fs::file_size(path) != expected) {
    throw ModelError("'" + path.string() + "' has " + std::to_string(fs::file_size(path)) +
                     " bytes, expected " + std::to_string(expected));
  }
  for (auto* b : blocks) {
    in.read(reinterpret_cast<char*>(b->data()), static_cast<std::streamsize>(b->size() * sizeof(float)));
  }
  if (!in) throw ModelError("short read from '" + path.string() + "'");
}

}  // namespace

void save_checkpoint(const std::string& dir, const Transformer<float>& model, const Adam<float>& optimizer,
                     long long step, const pipeline::Vocabulary& vocab) {
  const fs::path root(dir);
  fs::create_directories(root);
  const auto& c = model.config();
  const auto& o = optimizer.config();
  nlohmann::json meta = {
      {"model",
       {{"encoder_layers", c.encoder_layers},
        {"decoder_layers", c.decoder_layers},
        {"model_dim", c.model_dim},
        {"feedforward_dim", c.feedforward_dim},
        {"heads", c.heads},
        {"dropout", c.dropout},
        {"vocab_size", c.vocab_size},
        {"max_positions", c.max_positions}}},
      {"optimizer",
       {{"learning_rate", o.learning_rate},
        {"warmup_steps", o.warmup_steps},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"epsilon", o.epsilon},
        {"clip_norm", o.clip_norm},
        {"lazy_embeddings", o.lazy_embeddings}}},
      {"step", step},
      {"adam_step", optimizer.state().step},
      {"parameter_count", model.parameter_count()},
      {"config_fingerprint", c.fingerprint()},
      {"vocab_fingerprint", vocab.fingerprint()},
  };
  write_floats(root / "params.bin", {&model.parameters()});
  write_floats(root / "optimizer.bin", {&optimizer.state().first, &optimizer.state().second});
  vocab.save((root / "vocab.txt").string());
  std::ofstream(root / "meta.json") << meta.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "meta.json");
  if (!in) throw ModelError("no checkpoint metadata in '" + dir + "'");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("malformed checkpoint metadata in '" + dir + "': " + e.what());
  }
  Checkpoint ck;
  try {
    const auto& m = meta.at("model");
    ck.config.encoder_layers = m.at("encoder_layers");
    ck.config.decoder_layers = m.at("decoder_layers");
    ck.config.model_dim = m.at("model_dim");
    ck.config.feedforward_dim = m.at("feedforward_dim");
    ck.config.heads = m.at("heads");
    ck.config.dropout = m.at("dropout");
    ck.config.vocab_size = m.at("vocab_size");
    ck.config.max_positions = m.at("max_positions");
    const auto& o = meta.at("optimizer");
    ck.optimizer.learning_rate = o.at("learning_rate");
    ck.optimizer.warmup_steps = o.at("warmup_steps");
    ck.optimizer.beta1 = o.at("beta1");
    ck.optimizer.beta2 = o.at("beta2");
    ck.optimizer.epsilon = o.at("epsilon");
    ck.optimizer.clip_norm = o.at("clip_norm");
    ck.optimizer.lazy_embeddings = o.value("lazy_embeddings", false);
    ck.step = meta.at("step");
    ck.adam.step = meta.at("adam_step");
    ck.config_fingerprint = meta.at("config_fingerprint");
    ck.vocab_fingerprint = meta.at("vocab_fingerprint");
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("checkpoint metadata in '" + dir + "' is incomplete: " + e.what());
  }
  if (ck.config_fingerprint != ck.config.fingerprint()) {
    throw ModelError("checkpoint '" + dir + "' fingerprint does not match its configuration");
  }
  const auto n = static_cast<Eigen::Index>(ParameterLayout::build(ck.config).total);
  ck.parameters.resize(n);
  ck.adam.first.resize(n);
  ck.adam.second.resize(n);
  read_floats(root / "params.bin", {&ck.parameters});
  read_floats(root / "optimizer.bin", {&ck.adam.first, &ck.adam.second});
  return ck;
}

}  // namespace promptmt::model
