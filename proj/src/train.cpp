#include "mvitime/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace mvitime::train {

using nn::Tensor;
using nn::Var;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fnv_digest(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Without-replacement batch sampler, reshuffled each pass.
class Sampler {
 public:
  Sampler(std::size_t n, Rng rng) : rng_(rng), order_(n) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_);
  }
  std::vector<std::size_t> next(std::size_t k) {
    std::vector<std::size_t> out;
    out.reserve(k);
    while (out.size() < k) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

Tensor<float> to_input(const std::vector<const std::vector<double>*>& signals, int length) {
  Tensor<float> x({static_cast<int>(signals.size()), 1, length});
  for (std::size_t i = 0; i < signals.size(); ++i) {
    if (static_cast<int>(signals[i]->size()) != length) {
      throw ConfigMismatch("signal length does not match model input length");
    }
    for (int j = 0; j < length; ++j) {
      x.at(static_cast<int>(i), 0, j) = static_cast<float>((*signals[i])[j]);
    }
  }
  return x;
}

std::map<std::string, Tensor<float>> collect_grads(
    const std::map<std::string, Var<float>>& leaves) {
  std::map<std::string, Tensor<float>> grads;
  for (const auto& [name, leaf] : leaves) {
    if (!leaf->grad.v.empty()) grads[name] = leaf->grad;
  }
  return grads;
}

// NT-Xent on the embedding rows of a pass; returns loss and seeds the
// backward pass with the analytic gradient.
double contrastive_backward(nn::MViTime<float>::Pass& pass,
                            const std::vector<std::size_t>& pairing, double temperature) {
  const int rows = pass.embedding->val.dim(0);
  const int dim = pass.embedding->val.dim(1);
  contrastive::EmbeddingBatch batch;
  batch.vectors.resize(rows, dim);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < dim; ++j) batch.vectors(i, j) = pass.embedding->val.at(i, j);
  batch.pairing = pairing;
  const auto res = contrastive::nt_xent_loss(batch, temperature);
  Tensor<float> seed({rows, dim});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < dim; ++j) seed.at(i, j) = static_cast<float>(res.grad(i, j));
  nn::backward(pass.embedding, seed);
  return res.loss;
}

// Softmax cross-entropy over logits; seeds backward with (p - onehot)/B.
double cross_entropy_backward(const Var<float>& logits, const std::vector<int>& labels) {
  const int B = logits->val.dim(0);
  const int C = logits->val.dim(1);
  Tensor<float> seed({B, C});
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    double mx = logits->val.at(b, 0);
    for (int c = 1; c < C; ++c) mx = std::max<double>(mx, logits->val.at(b, c));
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(logits->val.at(b, c) - mx);
    loss += -(logits->val.at(b, labels[b]) - mx - std::log(z));
    for (int c = 0; c < C; ++c) {
      const double p = std::exp(logits->val.at(b, c) - mx) / z;
      seed.at(b, c) = static_cast<float>((p - (c == labels[b] ? 1.0 : 0.0)) / B);
    }
  }
  nn::backward(logits, seed);
  return loss / B;
}

std::string loss_digest(const std::vector<double>& losses) {
  if (losses.empty()) return "empty";
  char buf[96];
  std::snprintf(buf, sizeof buf, "n=%zu first=%.6g last=%.6g", losses.size(), losses.front(),
                losses.back());
  return buf;
}

}  // namespace

nlohmann::json TrainReport::to_json() const {
  return {{"losses", losses},
          {"final_loss", final_loss},
          {"wall_seconds", wall_seconds},
          {"seed", seed},
          {"config_digest", config_digest}};
}

void TrainReport::write_loss_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  out << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << "," << losses[i] << "\n";
}

double cosine_warmup_lr(long step, double base_lr, long warmup_steps, long total_steps) {
  if (step < 0 || step > total_steps) throw StepOutOfRange("lr schedule step out of range");
  if (warmup_steps > 0 && step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps == warmup_steps) return base_lr;
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(kPi * t));
}

void sgd_step(std::vector<float>& params, const std::vector<float>& grads,
              std::vector<float>& velocity, double lr, double momentum, double weight_decay) {
  if (params.size() != grads.size()) throw nn::ShapeMismatch("sgd_step: size mismatch");
  velocity.resize(params.size(), 0.0f);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = static_cast<float>(momentum * velocity[i] + grads[i] + weight_decay * params[i]);
    params[i] -= static_cast<float>(lr * velocity[i]);
  }
}

void sgd_update(std::map<std::string, Tensor<float>>& params,
                const std::map<std::string, Tensor<float>>& grads, SgdState& state, double lr,
                double momentum, double weight_decay) {
  for (auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw nn::ShapeMismatch("sgd_update: unknown parameter " + name);
    auto& v = state.velocity[name];
    if (v.v.empty()) v = Tensor<float>(it->second.shape);
    sgd_step(it->second.v, g.v, v.v, lr, momentum, weight_decay);
  }
}

namespace {

// Shared contrastive training loop over per-step view batches.
PretrainResult contrastive_loop(
    nn::MViTime<float>& model, const TrainConfig& cfg,
    const std::function<void(long step, std::vector<std::vector<double>>& views,
                             std::vector<std::size_t>& pairing)>& make_batch) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = cfg.seed;
  report.config_digest = fnv_digest(model.cfg.to_json().dump());
  SgdState sgd;

  for (long step = 0; step < cfg.total_steps; ++step) {
    std::vector<std::vector<double>> views;
    std::vector<std::size_t> pairing;
    make_batch(step, views, pairing);

    std::vector<const std::vector<double>*> ptrs;
    ptrs.reserve(views.size());
    for (const auto& v : views) ptrs.push_back(&v);
    const Tensor<float> x = to_input(ptrs, model.cfg.input_length);

    auto pass = model.forward(x, /*want_embedding=*/true, /*want_logits=*/false);
    const double loss = contrastive_backward(pass, pairing, cfg.temperature);
    report.losses.push_back(loss);

    const double lr = cosine_warmup_lr(step + 1, cfg);
    sgd_update(model.params, collect_grads(pass.leaves), sgd, lr, cfg.momentum,
               cfg.weight_decay);

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
        (step + 1) % cfg.checkpoint_every == 0) {
      nn::CheckpointMeta meta{step + 1, cfg.seed, loss_digest(report.losses),
                              report.config_digest};
      nn::save_checkpoint(cfg.checkpoint_dir + "/step" + std::to_string(step + 1) + ".ckpt",
                          nn::to_checkpoint(model, meta));
    }
  }
  report.final_loss = report.losses.empty() ? 0.0 : report.losses.back();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  PretrainResult result;
  nn::CheckpointMeta meta{cfg.total_steps, cfg.seed, loss_digest(report.losses),
                          report.config_digest};
  result.checkpoint = nn::to_checkpoint(model, meta);
  result.report = std::move(report);
  return result;
}

}  // namespace

PretrainResult pretrain_self(const std::vector<ingest::Epoch>& epochs,
                             const nn::ModelConfig& model_cfg, const TrainConfig& cfg,
                             const augment::AugmentConfig& aug) {
  if (epochs.empty()) throw EmptyDataset("pretrain_self: empty dataset");
  for (const auto& e : epochs) {
    if (static_cast<int>(e.samples.size()) != model_cfg.input_length) {
      throw ConfigMismatch("epoch length does not match model input length");
    }
  }
  nn::MViTime<float> model(model_cfg, cfg.seed);
  const std::size_t batch = std::min<std::size_t>(cfg.pretrain_batch, epochs.size());
  Rng root(cfg.seed);
  Sampler sampler(epochs.size(), root.substream("batch"));

  return contrastive_loop(model, cfg,
                          [&](long step, std::vector<std::vector<double>>& views,
                              std::vector<std::size_t>& pairing) {
                            Rng step_rng = root.substream("augment", static_cast<std::uint64_t>(step));
                            const auto idx = sampler.next(batch);
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              auto vp = augment::make_views(epochs[idx[i]].samples,
                                                            static_cast<long>(i), aug, step_rng);
                              views.push_back(std::move(vp.view_a));
                              views.push_back(std::move(vp.view_b));
                              pairing.push_back(2 * i + 1);
                              pairing.push_back(2 * i);
                            }
                          });
}

PretrainResult pretrain_cross_subject(const std::vector<ingest::Epoch>& epochs,
                                      const nn::ModelConfig& model_cfg, const TrainConfig& cfg,
                                      const augment::AugmentConfig& aug) {
  if (epochs.empty()) throw EmptyDataset("pretrain_cross_subject: empty dataset");

  // First epoch of each stage per subject, temporal order.
  std::map<std::string, std::map<ingest::SleepStage, ingest::Epoch>> by_subject;
  for (const auto& e : epochs) {
    auto& stages = by_subject[e.subject_id];
    stages.try_emplace(e.stage, e);
  }
  std::vector<std::string> missing;
  for (const auto& [subject, stages] : by_subject) {
    if (stages.size() != static_cast<std::size_t>(ingest::kNumStages)) missing.push_back(subject);
  }
  if (!missing.empty()) {
    std::string msg = "subjects missing stages:";
    for (const auto& s : missing) msg += " " + s;
    throw contrastive::MissingStage(msg);
  }
  if (by_subject.size() < 2) throw EmptyDataset("pretrain_cross_subject: need >= 2 subjects");

  const int L = model_cfg.input_length;
  const auto p = static_cast<Eigen::Index>(5) * L;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(by_subject.size()), p);
  std::vector<std::string> subjects;
  Eigen::Index row = 0;
  for (const auto& [subject, stages] : by_subject) {
    subjects.push_back(subject);
    Eigen::Index col = 0;
    for (int s = 0; s < ingest::kNumStages; ++s) {
      const auto& samples = stages.at(static_cast<ingest::SleepStage>(s)).samples;
      for (double v : samples) X(row, col++) = v;
    }
    ++row;
  }

  const Eigen::Index k_request = cfg.pca_dim > 0 ? cfg.pca_dim : L;
  const Eigen::Index k = std::min<Eigen::Index>(k_request, std::min<Eigen::Index>(X.rows(), p));
  const auto basis = contrastive::pca_fit(X, k);

  std::vector<contrastive::SubjectFeature> features;
  for (const auto& subject : subjects) {
    features.push_back(
        contrastive::subject_feature(subject, by_subject.at(subject), basis));
  }
  // Features shorter than L (few subjects, small PCA rank) are stretched to
  // the backbone's input length; zero-padding would let a cropped view land
  // entirely in the padding and degenerate to the zero signal.
  std::vector<std::vector<double>> feat_signals;
  for (const auto& f : features) {
    if (f.vector.size() > L) throw ConfigMismatch("subject feature longer than input length");
    std::vector<double> sig(f.vector.data(), f.vector.data() + f.vector.size());
    feat_signals.push_back(augment::resize_linear(sig, static_cast<std::size_t>(L)));
  }

  nn::MViTime<float> model(model_cfg, cfg.seed);
  Rng root(cfg.seed);
  return contrastive_loop(model, cfg,
                          [&](long step, std::vector<std::vector<double>>& views,
                              std::vector<std::size_t>& pairing) {
                            Rng step_rng = root.substream("augment-isc", static_cast<std::uint64_t>(step));
                            for (std::size_t i = 0; i < feat_signals.size(); ++i) {
                              auto vp = augment::make_views(feat_signals[i],
                                                            static_cast<long>(i), aug, step_rng);
                              views.push_back(std::move(vp.view_a));
                              views.push_back(std::move(vp.view_b));
                              pairing.push_back(2 * i + 1);
                              pairing.push_back(2 * i);
                            }
                          });
}

FinetuneResult finetune(const nn::Checkpoint& start, const std::vector<ingest::Epoch>& epochs,
                        const TrainConfig& cfg) {
  if (epochs.empty()) throw EmptyDataset("finetune: empty dataset");
  auto model = nn::from_checkpoint<float>(start);
  const int L = model.cfg.input_length;
  for (const auto& e : epochs) {
    if (static_cast<int>(e.samples.size()) != L) {
      throw ConfigMismatch("epoch length does not match checkpoint input length");
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = cfg.seed;
  report.config_digest = fnv_digest(model.cfg.to_json().dump());
  SgdState sgd;
  Rng root(cfg.seed);
  Sampler sampler(epochs.size(), root.substream("batch-ft"));
  const std::size_t batch = std::min<std::size_t>(cfg.finetune_batch, epochs.size());

  for (long step = 0; step < cfg.total_steps; ++step) {
    const auto idx = sampler.next(batch);
    std::vector<const std::vector<double>*> ptrs;
    std::vector<int> labels;
    for (auto i : idx) {
      ptrs.push_back(&epochs[i].samples);
      labels.push_back(static_cast<int>(epochs[i].stage));
    }
    auto pass = model.forward(to_input(ptrs, L), false, /*want_logits=*/true);
    report.losses.push_back(cross_entropy_backward(pass.logits, labels));
    const double lr = cosine_warmup_lr(step + 1, cfg);
    sgd_update(model.params, collect_grads(pass.leaves), sgd, lr, cfg.momentum, cfg.weight_decay);
  }
  report.final_loss = report.losses.empty() ? 0.0 : report.losses.back();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // training accuracy over the full dataset
  long correct = 0;
  const std::size_t chunk = 64;
  for (std::size_t i = 0; i < epochs.size(); i += chunk) {
    std::vector<const std::vector<double>*> ptrs;
    for (std::size_t j = i; j < std::min(epochs.size(), i + chunk); ++j) {
      ptrs.push_back(&epochs[j].samples);
    }
    auto pass = model.forward(to_input(ptrs, L), false, true, false);
    for (std::size_t j = 0; j < ptrs.size(); ++j) {
      int best = 0;
      for (int c = 1; c < model.cfg.n_classes; ++c) {
        if (pass.logits->val.at(static_cast<int>(j), c) >
            pass.logits->val.at(static_cast<int>(j), best)) {
          best = c;
        }
      }
      if (best == static_cast<int>(epochs[i + j].stage)) ++correct;
    }
  }

  FinetuneResult result;
  nn::CheckpointMeta meta{cfg.total_steps, cfg.seed, loss_digest(report.losses),
                          report.config_digest};
  result.checkpoint = nn::to_checkpoint(model, meta);
  result.report = std::move(report);
  result.final_train_accuracy = static_cast<double>(correct) / static_cast<double>(epochs.size());
  return result;
}

// ---- combined backbones ----

struct CombinedModel::Graph {
  nn::MViTime<float>::Pass self_pass;
  nn::MViTime<float>::Pass cross_pass;
  std::map<std::string, Var<float>> cls_leaves;
  Var<float> features;
  Var<float> logits;
};

CombinedModel::CombinedModel(const nn::Checkpoint& self_ckpt, const nn::Checkpoint& cross_ckpt,
                             double alpha, CombineMode mode, std::uint64_t classifier_seed)
    : self_(nn::from_checkpoint<float>(self_ckpt)),
      cross_(nn::from_checkpoint<float>(cross_ckpt)),
      alpha_(alpha),
      mode_(mode) {
  if (alpha < 0.0 || alpha > 1.0) throw DimMismatch("alpha must lie in [0, 1]");
  if (self_.cfg.input_length != cross_.cfg.input_length) {
    throw DimMismatch("branches disagree on input length");
  }
  if (mode_ == CombineMode::Features) {
    if (self_.feature_dim() != cross_.feature_dim()) {
      throw DimMismatch("feature dimensions differ in features mode");
    }
    const int F = self_.feature_dim();
    Rng rng = Rng(classifier_seed).substream("combined-cls");
    Tensor<float> w({self_.cfg.n_classes, F});
    const double bound = std::sqrt(3.0 / F);
    for (auto& x : w.v) x = static_cast<float>((2.0 * rng.uniform_real() - 1.0) * bound);
    cls_["w"] = std::move(w);
    cls_["b"] = Tensor<float>({self_.cfg.n_classes});
  } else {
    if (!(self_.cfg == cross_.cfg)) {
      throw DimMismatch("full mode requires identical architectures");
    }
  }
}

CombinedModel::Graph CombinedModel::build(const Tensor<float>& x) const {
  Graph g;
  const bool full = mode_ == CombineMode::Full;
  g.self_pass = self_.forward(x, false, full);
  g.cross_pass = cross_.forward(x, false, full);
  const auto a = static_cast<float>(alpha_);
  g.features = nn::add(nn::scale(g.self_pass.features, a),
                       nn::scale(g.cross_pass.features, 1.0f - a));
  if (full) {
    g.logits = nn::add(nn::scale(g.self_pass.logits, a),
                       nn::scale(g.cross_pass.logits, 1.0f - a));
  } else {
    auto w = nn::make_leaf(cls_.at("w"));
    auto b = nn::make_leaf(cls_.at("b"));
    g.cls_leaves["w"] = w;
    g.cls_leaves["b"] = b;
    g.logits = nn::add_bias_last(nn::linear(g.features, w), b);
  }
  return g;
}

Tensor<float> CombinedModel::features(const Tensor<float>& x) const {
  return build(x).features->val;
}

Tensor<float> CombinedModel::logits(const Tensor<float>& x) const { return build(x).logits->val; }

TrainReport CombinedModel::finetune(const std::vector<ingest::Epoch>& epochs,
                                    const TrainConfig& cfg) {
  if (epochs.empty()) throw EmptyDataset("combined finetune: empty dataset");
  const int L = self_.cfg.input_length;
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = cfg.seed;
  report.config_digest = fnv_digest(self_.cfg.to_json().dump());
  SgdState sgd_self, sgd_cross, sgd_cls;
  Rng root(cfg.seed);
  Sampler sampler(epochs.size(), root.substream("batch-comb"));
  const std::size_t batch = std::min<std::size_t>(cfg.finetune_batch, epochs.size());

  for (long step = 0; step < cfg.total_steps; ++step) {
    const auto idx = sampler.next(batch);
    std::vector<const std::vector<double>*> ptrs;
    std::vector<int> labels;
    for (auto i : idx) {
      ptrs.push_back(&epochs[i].samples);
      labels.push_back(static_cast<int>(epochs[i].stage));
    }
    auto g = build(to_input(ptrs, L));
    report.losses.push_back(cross_entropy_backward(g.logits, labels));
    const double lr = cosine_warmup_lr(step + 1, cfg);
    sgd_update(self_.params, collect_grads(g.self_pass.leaves), sgd_self, lr, cfg.momentum,
               cfg.weight_decay);
    sgd_update(cross_.params, collect_grads(g.cross_pass.leaves), sgd_cross, lr, cfg.momentum,
               cfg.weight_decay);
    if (mode_ == CombineMode::Features) {
      sgd_update(cls_, collect_grads(g.cls_leaves), sgd_cls, lr, cfg.momentum, cfg.weight_decay);
    }
  }
  report.final_loss = report.losses.empty() ? 0.0 : report.losses.back();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace mvitime::train
