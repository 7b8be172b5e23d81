// Copyright 2026 The MBL Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mbl/model.hpp"

#include <cmath>
#include <stdexcept>

#include "mbl/rng.hpp"

namespace mbl {
namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> data(numel(shape));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(data), true);
}

Tensor deep_copy(const Tensor& t) {
  if (!t.defined()) return t;
  Tensor c = t.detach();
  c.set_requires_grad(t.requires_grad());
  return c;
}

}  // namespace

std::string BranchSpec::name() const { return to_string(strategy) + "-" + to_string(method); }

BranchSpec parse_branch(const std::string& name, double alpha, double beta) {
  if (name.size() != 5 || name[1] != '-') {
    throw std::invalid_argument("malformed branch name '" + name + "' (expected e.g. E-ATP)");
  }
  BranchSpec spec;
  if (name[0] == 'E') {
    spec.strategy = MilStrategy::kEmbedding;
    spec.loss_weight = alpha;
  } else if (name[0] == 'I') {
    spec.strategy = MilStrategy::kInstance;
    spec.loss_weight = beta;
  } else {
    throw std::invalid_argument("branch '" + name + "': strategy must be E or I");
  }
  const std::string method = name.substr(2);
  if (method == "GMP") {
    spec.method = PoolMethod::kGmp;
  } else if (method == "GAP") {
    spec.method = PoolMethod::kGap;
  } else if (method == "ATP") {
    spec.method = PoolMethod::kAtp;
  } else {
    throw std::invalid_argument("branch '" + name + "': pooling must be GMP, GAP or ATP");
  }
  return spec;
}

std::vector<BranchSpec> parse_branches(const std::vector<std::string>& names, double alpha,
                                       double beta) {
  std::vector<BranchSpec> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(parse_branch(n, alpha, beta));
  return out;
}

std::string branch_list_name(const std::vector<BranchSpec>& branches) {
  std::string out;
  for (const auto& b : branches) {
    if (!out.empty()) out += " + ";
    out += b.name();
  }
  return out;
}

std::size_t ModelConfig::output_bands() const {
  std::size_t bands = input_bands;
  for (const auto& b : encoder) bands /= std::max<std::size_t>(b.freq_pool, 1);
  return bands;
}

std::size_t ModelConfig::feature_dim() const {
  return encoder.empty() ? input_bands : encoder.back().out_channels * output_bands();
}

std::size_t ModelConfig::time_reduction() const {
  std::size_t r = 1;
  for (const auto& b : encoder) r *= b.time_pool;
  return r;
}

std::size_t ModelConfig::main_branch_index() const {
  for (std::size_t i = 0; i < branches.size(); ++i)
    if (branches[i].is_main()) return i;
  throw std::invalid_argument("model has no embedding-level main branch");
}

void ModelConfig::validate() const {
  if (encoder.empty()) throw std::invalid_argument("encoder needs at least one CNN block");
  for (const auto& b : encoder) {
    if (b.out_channels == 0) throw std::invalid_argument("CNN block with zero channels");
    if (b.kernel[0] % 2 == 0 || b.kernel[1] % 2 == 0) {
      throw std::invalid_argument("CNN block kernels must have odd sizes");
    }
    if (b.freq_pool < 1 || b.time_pool < 1) throw std::invalid_argument("pool factors must be >= 1");
    if (!(b.dropout >= 0.0 && b.dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  }
  if (output_bands() == 0) throw std::invalid_argument("frequency pooling exceeds the input bands");
  if (class_names.empty()) throw std::invalid_argument("at least one event class is required");
  std::size_t mains = 0;
  for (const auto& b : branches) mains += b.is_main() ? 1 : 0;
  if (mains != 1) {
    throw std::invalid_argument("branch list '" + branch_list_name(branches) +
                                "' must contain exactly one embedding-level (E-*) main branch");
  }
  if (!(attention_scale > 0.0)) throw std::invalid_argument("attention scale d must be positive");
  if (!(bn_eps > 0.0)) throw std::invalid_argument("batch-norm eps must be positive");
  if (optimizer.batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

ModelConfig ModelConfig::small(std::vector<std::string> classes, std::vector<BranchSpec> branches) {
  ModelConfig c;
  c.class_names = std::move(classes);
  c.branches = std::move(branches);
  for (std::size_t pool : {4, 2, 2}) {
    CnnBlockSpec b;
    b.out_channels = 40;
    b.freq_pool = pool;
    c.encoder.push_back(b);
  }
  c.attention_scale = static_cast<double>(c.feature_dim()) / 2.5;
  c.optimizer.epochs = 60;
  return c;
}

ModelConfig ModelConfig::large(std::vector<std::string> classes, std::vector<BranchSpec> branches) {
  ModelConfig c;
  c.class_names = std::move(classes);
  c.branches = std::move(branches);
  const std::size_t channels[] = {32, 32, 64, 64, 128, 128, 256, 256, 256};
  const std::size_t pools[] = {1, 2, 1, 2, 1, 2, 1, 2, 1};
  for (std::size_t i = 0; i < 9; ++i) {
    CnnBlockSpec b;
    b.out_channels = channels[i];
    b.freq_pool = pools[i];
    b.dropout = 0.3;
    c.encoder.push_back(b);
  }
  c.attention_scale = static_cast<double>(c.feature_dim()) / 3.0;
  c.optimizer.epochs = 100;
  return c;
}

nlohmann::json to_json(const ModelConfig& config) {
  nlohmann::json j;
  j["input_bands"] = config.input_bands;
  j["class_names"] = config.class_names;
  nlohmann::json enc = nlohmann::json::array();
  for (const auto& b : config.encoder) {
    enc.push_back({{"out_channels", b.out_channels},
                   {"kernel", {b.kernel[0], b.kernel[1]}},
                   {"freq_pool", b.freq_pool},
                   {"time_pool", b.time_pool},
                   {"dropout", b.dropout}});
  }
  j["encoder"] = enc;
  nlohmann::json br = nlohmann::json::array();
  for (const auto& b : config.branches) br.push_back({{"name", b.name()}, {"loss_weight", b.loss_weight}});
  j["branches"] = br;
  j["attention_scale"] = config.attention_scale;
  j["bn_eps"] = config.bn_eps;
  j["bn_momentum"] = config.bn_momentum;
  j["optimizer"] = {{"learning_rate", config.optimizer.learning_rate},
                    {"beta1", config.optimizer.beta1},
                    {"beta2", config.optimizer.beta2},
                    {"epsilon", config.optimizer.epsilon},
                    {"batch_size", config.optimizer.batch_size},
                    {"epochs", config.optimizer.epochs}};
  j["seed"] = config.seed;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_bands = j.at("input_bands").get<std::size_t>();
  c.class_names = j.at("class_names").get<std::vector<std::string>>();
  for (const auto& b : j.at("encoder")) {
    CnnBlockSpec spec;
    spec.out_channels = b.at("out_channels").get<std::size_t>();
    spec.kernel = {b.at("kernel").at(0).get<std::size_t>(), b.at("kernel").at(1).get<std::size_t>()};
    spec.freq_pool = b.at("freq_pool").get<std::size_t>();
    spec.time_pool = b.at("time_pool").get<std::size_t>();
    spec.dropout = b.at("dropout").get<double>();
    c.encoder.push_back(spec);
  }
  for (const auto& b : j.at("branches")) {
    BranchSpec spec = parse_branch(b.at("name").get<std::string>());
    spec.loss_weight = b.at("loss_weight").get<double>();
    c.branches.push_back(spec);
  }
  c.attention_scale = j.at("attention_scale").get<double>();
  c.bn_eps = j.at("bn_eps").get<double>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  const auto& o = j.at("optimizer");
  c.optimizer.learning_rate = o.at("learning_rate").get<double>();
  c.optimizer.beta1 = o.at("beta1").get<double>();
  c.optimizer.beta2 = o.at("beta2").get<double>();
  c.optimizer.epsilon = o.at("epsilon").get<double>();
  c.optimizer.batch_size = o.at("batch_size").get<std::size_t>();
  c.optimizer.epochs = o.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

SedModel::SedModel(ModelConfig config) : SedModel(std::move(config), true) {}

SedModel::SedModel(ModelConfig config, bool initialize) : config_(std::move(config)) {
  config_.validate();
  if (initialize) initialize_parameters();
}

// Every parameter group draws from its own stream keyed by its role, so a
// branch starts from the same weights regardless of which other branches
// share the model.
void SedModel::initialize_parameters() {
  const std::size_t c = config_.num_classes();
  const std::size_t e = config_.feature_dim();
  std::size_t in_channels = 1;
  blocks_.clear();
  for (std::size_t i = 0; i < config_.encoder.size(); ++i) {
    const auto& spec = config_.encoder[i];
    Rng rng(mix_seed(config_.seed, fnv1a("encoder." + std::to_string(i))));
    const std::size_t fan_in = in_channels * spec.kernel[0] * spec.kernel[1];
    Block block;
    block.kernel = uniform_tensor({spec.out_channels, in_channels, spec.kernel[0], spec.kernel[1]},
                                  std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
    block.bias = Tensor::zeros({spec.out_channels}, true);
    block.gamma = Tensor::full({spec.out_channels}, 1.0, true);
    block.beta = Tensor::zeros({spec.out_channels}, true);
    block.bn = BatchNormState(spec.out_channels);
    block.bn.momentum = config_.bn_momentum;
    blocks_.push_back(std::move(block));
    in_channels = spec.out_channels;
  }
  branches_.clear();
  const double bound = 1.0 / std::sqrt(static_cast<double>(e));
  for (const auto& spec : config_.branches) {
    Rng rng(mix_seed(config_.seed, fnv1a("branch." + spec.name())));
    Branch branch;
    branch.spec = spec;
    branch.classifier.weight = uniform_tensor({e, c}, bound, rng);
    branch.classifier.bias = Tensor::zeros({c}, true);
    if (spec.method == PoolMethod::kAtp) {
      branch.attention = AttentionParams{uniform_tensor({c, e}, bound, rng), config_.attention_scale};
    }
    branches_.push_back(std::move(branch));
  }
}

SedModel SedModel::clone() const {
  SedModel copy(config_, false);
  for (const auto& b : blocks_) {
    Block nb;
    nb.kernel = deep_copy(b.kernel);
    nb.bias = deep_copy(b.bias);
    nb.gamma = deep_copy(b.gamma);
    nb.beta = deep_copy(b.beta);
    nb.bn = b.bn;
    copy.blocks_.push_back(std::move(nb));
  }
  for (const auto& br : branches_) {
    Branch nb;
    nb.spec = br.spec;
    nb.classifier = {deep_copy(br.classifier.weight), deep_copy(br.classifier.bias)};
    if (br.attention) nb.attention = AttentionParams{deep_copy(br.attention->weight), br.attention->scale};
    copy.branches_.push_back(std::move(nb));
  }
  return copy;
}

SedModel SedModel::main_only() const {
  SedModel full = clone();
  const std::size_t main = config_.main_branch_index();
  ModelConfig cfg = config_;
  cfg.branches = {config_.branches[main]};
  SedModel out(std::move(cfg), false);
  out.blocks_ = std::move(full.blocks_);
  out.branches_.push_back(std::move(full.branches_[main]));
  return out;
}

Tensor SedModel::encode(Tape& tape, const Tensor& batch, Mode mode, std::uint64_t dropout_seed) {
  if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(3) != config_.input_bands) {
    throw ShapeError("encode: expected [N, 1, T, " + std::to_string(config_.input_bands) +
                     "], got " + shape_str(batch.shape()));
  }
  if (batch.dim(2) < config_.time_reduction()) {
    throw ShapeError("encode: clip of " + std::to_string(batch.dim(2)) +
                     " frames is shorter than the encoder's time pooling (" +
                     std::to_string(config_.time_reduction()) + ")");
  }
  Tensor x = batch;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& spec = config_.encoder[i];
    Block& block = blocks_[i];
    Conv2dParams conv;
    conv.padding = {spec.kernel[0] / 2, spec.kernel[1] / 2};
    x = conv2d(tape, x, block.kernel, block.bias, conv);
    x = batch_norm(tape, x, block.gamma, block.beta, config_.bn_eps, mode, block.bn);
    x = relu(tape, x);
    if (spec.time_pool > 1 || spec.freq_pool > 1) {
      x = max_pool2d(tape, x, {spec.time_pool, spec.freq_pool});
    }
    if (spec.dropout > 0.0) x = dropout(tape, x, spec.dropout, mix_seed(dropout_seed, i), mode);
  }
  // [N, K, T', F'] -> [N, T', K * F']
  const std::size_t n = x.dim(0), k = x.dim(1), t = x.dim(2), f = x.dim(3);
  x = permute(tape, x, {0, 2, 1, 3});
  return reshape(tape, x, {n, t, k * f});
}

Tensor SedModel::encode(const LogMelClip& clip) const {
  if (clip.bands != config_.input_bands) {
    throw ShapeError("encode: clip has " + std::to_string(clip.bands) + " bands, model expects " +
                     std::to_string(config_.input_bands));
  }
  const LogMelClip* ptr = &clip;
  Tensor batch = stack_clips(std::span<const LogMelClip* const>(&ptr, 1));
  // Running statistics are only read in eval mode; work on a shallow copy so
  // the const model is never touched.
  SedModel view(config_, false);
  view.blocks_ = blocks_;
  Tape tape;
  Tensor features = view.encode(tape, batch, Mode::kEval);
  return select(tape, features, 0).detach();
}

std::vector<Tensor> SedModel::forward_multibranch(Tape& tape, const Tensor& features) const {
  std::vector<Tensor> out;
  out.reserve(branches_.size());
  for (const auto& b : branches_) {
    out.push_back(clip_probabilities(tape, b.spec.strategy, b.spec.method, features,
                                     b.classifier, b.attention ? &*b.attention : nullptr));
  }
  return out;
}

Tensor SedModel::main_frame_probabilities(Tape& tape, const Tensor& features) const {
  const Branch& b = main_branch();
  return frame_probabilities(tape, b.spec.strategy, b.spec.method, features, b.classifier,
                             b.attention ? &*b.attention : nullptr);
}

ClipPrediction SedModel::predict(const LogMelClip& clip) const {
  Tensor features = encode(clip);
  const Branch& b = main_branch();
  Tape tape;
  Tensor clip_probs = clip_probabilities(tape, b.spec.strategy, b.spec.method, features,
                                         b.classifier, b.attention ? &*b.attention : nullptr);
  Tensor frames = main_frame_probabilities(tape, features);
  ClipPrediction pred;
  pred.clip_probs.assign(clip_probs.data().begin(), clip_probs.data().end());
  pred.frame_probs.assign(frames.data().begin(), frames.data().end());
  pred.frames = frames.dim(0);
  pred.classes = frames.dim(1);
  return pred;
}

Tensor SedModel::batch_loss(Tape& tape, const Tensor& features,
                            std::span<const std::vector<double>> labels) const {
  if (features.rank() != 3 || features.dim(0) != labels.size()) {
    throw ShapeError("batch_loss: features " + shape_str(features.shape()) + " vs " +
                     std::to_string(labels.size()) + " label vectors");
  }
  const std::size_t n = labels.size();
  Tensor total;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor clip_features = select(tape, features, i);
    std::vector<Tensor> probs = forward_multibranch(tape, clip_features);
    for (std::size_t b = 0; b < probs.size(); ++b) {
      Tensor term = scale(tape, clip_loss(tape, probs[b], labels[i]), branches_[b].spec.loss_weight);
      total = total.defined() ? add(tape, total, term) : term;
    }
  }
  return scale(tape, total, 1.0 / static_cast<double>(n));
}

std::vector<NamedTensor> SedModel::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i) + ".";
    out.push_back({p + "kernel", blocks_[i].kernel});
    out.push_back({p + "bias", blocks_[i].bias});
    out.push_back({p + "gamma", blocks_[i].gamma});
    out.push_back({p + "beta", blocks_[i].beta});
  }
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    const auto& b = branches_[i];
    const std::string p = "branch." + std::to_string(i) + "." + b.spec.name() + ".";
    out.push_back({p + "classifier.weight", b.classifier.weight});
    out.push_back({p + "classifier.bias", b.classifier.bias});
    if (b.attention) out.push_back({p + "attention.weight", b.attention->weight});
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> SedModel::buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i) + ".";
    out.emplace_back(p + "running_mean", &blocks_[i].bn.running_mean);
    out.emplace_back(p + "running_var", &blocks_[i].bn.running_var);
  }
  return out;
}

std::vector<std::pair<std::string, const std::vector<double>*>> SedModel::buffers() const {
  std::vector<std::pair<std::string, const std::vector<double>*>> out;
  for (auto& [name, ptr] : const_cast<SedModel*>(this)->buffers()) out.emplace_back(name, ptr);
  return out;
}

Tensor clip_loss(Tape& tape, const Tensor& clip_probs, std::span<const double> labels) {
  if (clip_probs.size() != labels.size()) {
    throw ShapeError("clip_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(clip_probs.size()) + " probabilities");
  }
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("clip_loss: labels must be 0 or 1");
  }
  constexpr double kClamp = 1e-7;
  const Shape shape = clip_probs.shape();
  Tensor y(shape, std::vector<double>(labels.begin(), labels.end()));
  std::vector<double> not_y_data(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) not_y_data[i] = 1.0 - labels[i];
  Tensor not_y(shape, std::move(not_y_data));

  Tensor p = clamp(tape, clip_probs, kClamp, 1.0 - kClamp);
  Tensor log_p = log(tape, p);
  Tensor log_not_p = log(tape, add_scalar(tape, scale(tape, p, -1.0), 1.0));
  Tensor ll = add(tape, mul(tape, y, log_p), mul(tape, not_y, log_not_p));
  return scale(tape, sum_all(tape, ll), -1.0);
}

Tensor total_loss(Tape& tape, const Tensor& main_loss, const std::vector<Tensor>& aux_losses,
                  double alpha, double beta) {
  Tensor total = scale(tape, main_loss, alpha);
  for (const Tensor& aux : aux_losses) total = add(tape, total, scale(tape, aux, beta));
  return total;
}

Tensor stack_clips(std::span<const LogMelClip* const> clips) {
  if (clips.empty()) throw std::invalid_argument("stack_clips: no clips");
  const std::size_t t = clips[0]->frames, f = clips[0]->bands;
  Buffer data;
  data.reserve(clips.size() * t * f);
  for (const LogMelClip* c : clips) {
    if (c->frames != t || c->bands != f) {
      throw ShapeError("stack_clips: clip '" + c->clip_id + "' is " + std::to_string(c->frames) +
                       "x" + std::to_string(c->bands) + ", batch expects " + std::to_string(t) +
                       "x" + std::to_string(f));
    }
    data.insert(data.end(), c->features.begin(), c->features.end());
  }
  return Tensor({clips.size(), 1, t, f}, std::move(data));
}

}  // namespace mbl
