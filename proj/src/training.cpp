#include "cvfc/training.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cvfc/fpenv.hpp"
#include "cvfc/rng.hpp"
#include "json.hpp"

namespace cvfc {

using nlohmann::json;

namespace {

json config_to_json(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  return json{{"seed", c.seed},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"decay_mode", c.decay_mode == DecayMode::weight_decay ? "weight_decay" : "poly_lr"},
              {"poly_power", c.poly_power},
              {"momentum", c.momentum},
              {"batch_size", c.batch_size},
              {"image_size", c.image_size},
              {"augment", c.augment},
              {"bg_threshold", c.bg_threshold},
              {"architecture", to_string(m.architecture)},
              {"class_names", m.class_names},
              {"backbones", m.branch_presets},
              {"attention_size", m.attention_size},
              {"projection_dim", m.projection_dim},
              {"qk_init", to_string(m.qk_init)},
              {"attention_scale", m.attention_scale},
              {"refined_logits", m.refined_logits},
              {"loss_distance", to_string(m.loss.distance)},
              {"cross_pairing", to_string(m.loss.cross_pairing)},
              {"use_consistency", m.loss.use_consistency},
              {"use_cross", m.loss.use_cross},
              {"dtype", to_string(m.dtype)}};
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint64_t> rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  std::istringstream is(os.str());
  std::vector<std::uint64_t> words;
  std::uint64_t w;
  while (is >> w) words.push_back(w);
  return words;
}

std::mt19937_64 rng_from_state(const std::vector<std::uint64_t>& words) {
  std::ostringstream os;
  for (std::size_t i = 0; i < words.size(); ++i) os << (i ? " " : "") << words[i];
  std::istringstream is(os.str());
  std::mt19937_64 rng;
  is >> rng;
  if (is.fail()) throw CorruptCheckpointError("checkpoint RNG state is malformed");
  return rng;
}

LossBreakdown nan_breakdown() {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {nan, nan, nan, nan, nan, nan, nan};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (image_size < 1) throw ConfigError("image_size must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(poly_power > 0.0)) throw ConfigError("poly_power must be positive");
  if (!(bg_threshold >= 0.0 && bg_threshold < 1.0)) throw ConfigError("bg_threshold must lie in [0,1)");
  if (model.class_names.empty()) throw ConfigError("class_names must not be empty");
  if (!(model.attention_scale > 0.0) || !std::isfinite(model.attention_scale)) {
    throw ConfigError("attention_scale must be positive");
  }
  for (const auto& p : model.branch_presets) {
    try {
      BackboneConfig::preset(p);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
}

std::string TrainConfig::to_json() const { return config_to_json(*this).dump(2); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c;
  const json known = config_to_json(c);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", c.seed);
    get("epochs", c.epochs);
    get("lr", c.lr);
    get("weight_decay", c.weight_decay);
    if (j.contains("decay_mode")) {
      const auto s = j.at("decay_mode").get<std::string>();
      if (s == "weight_decay") {
        c.decay_mode = DecayMode::weight_decay;
      } else if (s == "poly_lr") {
        c.decay_mode = DecayMode::poly_lr;
      } else {
        throw ConfigError("unknown decay_mode '" + s + "' (expected weight_decay or poly_lr)");
      }
    }
    get("poly_power", c.poly_power);
    get("momentum", c.momentum);
    get("batch_size", c.batch_size);
    get("image_size", c.image_size);
    get("augment", c.augment);
    get("bg_threshold", c.bg_threshold);
    if (j.contains("architecture")) c.model.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    get("class_names", c.model.class_names);
    get("backbones", c.model.branch_presets);
    get("attention_size", c.model.attention_size);
    get("projection_dim", c.model.projection_dim);
    if (j.contains("qk_init")) c.model.qk_init = qk_init_from_string(j.at("qk_init").get<std::string>());
    get("attention_scale", c.model.attention_scale);
    get("refined_logits", c.model.refined_logits);
    if (j.contains("loss_distance")) c.model.loss.distance = cam_distance_from_string(j.at("loss_distance").get<std::string>());
    if (j.contains("cross_pairing")) {
      c.model.loss.cross_pairing = cross_pairing_from_string(j.at("cross_pairing").get<std::string>());
    }
    get("use_consistency", c.model.loss.use_consistency);
    get("use_cross", c.model.loss.use_cross);
    if (j.contains("dtype")) {
      const auto s = j.at("dtype").get<std::string>();
      if (s == "f32") {
        c.model.dtype = DType::f32;
      } else if (s == "f64") {
        c.model.dtype = DType::f64;
      } else {
        throw ConfigError("unknown dtype '" + s + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.model.seed = c.seed;
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::uint64_t TrainConfig::hash() const {
  json j = config_to_json(*this);
  j.erase("epochs");
  return fnv1a(j.dump());
}

void sgd_step(Parameter& p, double lr, double weight_decay, double momentum, Tensor* velocity) {
  if (p.grad.empty()) p.zero_grad();
  if (p.grad.shape() != p.value.shape()) {
    throw DimensionError("sgd_step: gradient shape " + shape_string(p.grad.shape()) + " differs from " + p.name +
                         " " + shape_string(p.value.shape()));
  }
  if (!p.grad.all_finite()) throw TrainError("non-finite gradient for parameter " + p.name);
  const bool use_velocity = momentum > 0.0 && velocity != nullptr;
  if (use_velocity && (velocity->empty() || velocity->shape() != p.value.shape())) {
    *velocity = Tensor::zeros(p.value.shape(), DType::f64);
  }
  visit_dtype(p.value.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* w = p.value.data<T>().data();
    const Tensor g64 = p.grad.dtype() == p.value.dtype() ? Tensor() : p.grad.to(p.value.dtype());
    const T* g = g64.empty() ? p.grad.data<T>().data() : g64.data<T>().data();
    double* v = use_velocity ? velocity->data<double>().data() : nullptr;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double wi = static_cast<double>(w[i]);
      double step = static_cast<double>(g[i]) + weight_decay * wi;
      if (v) {
        v[i] = momentum * v[i] + step;
        step = v[i];
      }
      w[i] = static_cast<T>(wi - lr * step);
    }
  });
}

std::string breakdown_json(const LossBreakdown& b) {
  json j{{"l_cls_1", b.l_cls_1},         {"l_cls_2", b.l_cls_2}, {"l_cls_3", b.l_cls_3},
         {"l_cls_total", b.l_cls_total}, {"l_cons", b.l_cons},   {"l_cross", b.l_cross},
         {"total", b.total}};
  return j.dump();
}

std::string EpochLog::to_json_line() const {
  json j = json::parse(breakdown_json(mean));
  j["epoch"] = epoch;
  j["steps"] = steps;
  return j.dump();
}

Trainer::Trainer(TrainConfig cfg, std::unique_ptr<SegmentationNet> net)
    : cfg_(std::move(cfg)), net_(std::move(net)), rng_(derive_seed(cfg_.seed, {0x5eed})) {
  cfg_.validate();
  if (!net_) throw ArgumentError("trainer needs a model");
  trainable_ = net_->store().trainable();
  velocity_.resize(trainable_.size());
}

Trainer::Trainer(TrainConfig cfg) : Trainer(cfg, build_model([&] {
                                              ModelConfig m = cfg.model;
                                              m.seed = cfg.seed;
                                              return m;
                                            }())) {}

double Trainer::current_lr() const {
  if (cfg_.decay_mode == DecayMode::weight_decay || total_steps_ == 0) return cfg_.lr;
  const double t = std::min(1.0, static_cast<double>(step_) / static_cast<double>(total_steps_));
  return cfg_.lr * std::pow(1.0 - t, cfg_.poly_power);
}

LossBreakdown Trainer::co_train_step(std::span<const LabeledPatch> batch) {
  std::vector<const LabeledPatch*> ptrs;
  for (const auto& p : batch) ptrs.push_back(&p);
  return co_train_step(ptrs);
}

LossBreakdown Trainer::co_train_step(std::span<const LabeledPatch* const> batch) {
  if (batch.empty()) throw TrainError("co_train_step: empty batch");
  const FlushDenormals ftz;
  const DType dt = net_->config().dtype;
  const Tensor images = make_image_batch(batch, dt);
  const Tensor targets = make_target_batch(batch, dt);
  Graph g;
  LossTerms terms;
  try {
    terms = net_->compute_loss(g, images, targets, Mode::train);
  } catch (const NumericError& e) {
    throw NonFiniteLossError(std::string("non-finite value in forward pass: ") + e.what(), nan_breakdown());
  }
  const LossBreakdown b = terms.breakdown();
  if (!b.all_finite()) throw NonFiniteLossError("non-finite loss " + breakdown_json(b), b);
  for (Parameter* p : trainable_) p->zero_grad();
  try {
    g.backward(terms.total);
  } catch (const NumericError& e) {
    throw NonFiniteLossError(std::string("non-finite value in backward pass: ") + e.what(), b);
  }
  const double lr = current_lr();
  const double wd = cfg_.decay_mode == DecayMode::weight_decay ? cfg_.weight_decay : 0.0;
  for (std::size_t i = 0; i < trainable_.size(); ++i) {
    sgd_step(*trainable_[i], lr, wd, cfg_.momentum, cfg_.momentum > 0.0 ? &velocity_[i] : nullptr);
  }
  ++step_;
  return b;
}

EpochLog Trainer::train_epoch(std::span<const LabeledPatch> dataset) {
  if (dataset.size() < cfg_.batch_size) {
    throw TrainError("dataset has " + std::to_string(dataset.size()) + " patches, fewer than batch_size " +
                     std::to_string(cfg_.batch_size));
  }
  const std::size_t batches = (dataset.size() + cfg_.batch_size - 1) / cfg_.batch_size;
  total_steps_ = static_cast<std::uint64_t>(batches) * cfg_.epochs;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);

  EpochLog log;
  log.epoch = epoch_ + 1;
  std::vector<LabeledPatch> augmented;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    augmented.clear();
    std::vector<const LabeledPatch*> ptrs;
    for (std::size_t i = start; i < end; ++i) {
      const LabeledPatch& src = dataset[order[i]];
      if (cfg_.augment) {
        std::mt19937_64 patch_rng(derive_seed(cfg_.seed, {epoch_, order[i]}));
        augmented.push_back(augment(src, patch_rng));
      } else {
        ptrs.push_back(&src);
      }
    }
    if (cfg_.augment) {
      for (const auto& p : augmented) ptrs.push_back(&p);
    }
    const LossBreakdown b = co_train_step(ptrs);
    log.mean.l_cls_1 += b.l_cls_1;
    log.mean.l_cls_2 += b.l_cls_2;
    log.mean.l_cls_3 += b.l_cls_3;
    log.mean.l_cls_total += b.l_cls_total;
    log.mean.l_cons += b.l_cons;
    log.mean.l_cross += b.l_cross;
    log.mean.total += b.total;
    ++log.steps;
  }
  const double n = static_cast<double>(log.steps);
  for (double* v : {&log.mean.l_cls_1, &log.mean.l_cls_2, &log.mean.l_cls_3, &log.mean.l_cls_total,
                    &log.mean.l_cons, &log.mean.l_cross, &log.mean.total}) {
    *v /= n;
  }
  ++epoch_;
  return log;
}

void Trainer::train(std::span<const LabeledPatch> dataset, const std::function<void(const EpochLog&)>& on_epoch) {
  while (epoch_ < cfg_.epochs) {
    const EpochLog log = train_epoch(dataset);
    if (on_epoch) on_epoch(log);
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.put_string("meta.config", cfg_.to_json());
  const std::uint64_t hash = cfg_.hash();
  ck.put_u64("meta.config_hash", std::span(&hash, 1));
  const std::uint64_t counters[] = {epoch_, step_, total_steps_};
  ck.put_u64("meta.counters", counters);
  ck.put_u64("meta.rng", rng_state(rng_));
  for (Parameter* p : net_->store().all()) ck.put_tensor(p->name, p->value);
  if (cfg_.momentum > 0.0) {
    for (std::size_t i = 0; i < trainable_.size(); ++i) {
      ck.put_tensor("opt.velocity." + trainable_[i]->name,
                    velocity_[i].empty() ? Tensor::zeros(trainable_[i]->value.shape(), DType::f64) : velocity_[i]);
    }
  }
  return ck;
}

namespace {
void load_parameters(ParameterStore& store, const Checkpoint& ck) {
  for (Parameter* p : store.all()) {
    Tensor t = ck.tensor(p->name);
    if (t.shape() != p->value.shape() || t.dtype() != p->value.dtype()) {
      throw CorruptCheckpointError("checkpoint entry '" + p->name + "' has shape " + shape_string(t.shape()) +
                                   ", model expects " + shape_string(p->value.shape()));
    }
    p->value = std::move(t);
  }
}
}  // namespace

void Trainer::restore(const Checkpoint& ck) {
  const auto hash = ck.u64("meta.config_hash");
  if (hash.size() != 1 || hash[0] != cfg_.hash()) {
    throw ConfigError("checkpoint was written with a different configuration");
  }
  const auto counters = ck.u64("meta.counters");
  if (counters.size() != 3) throw CorruptCheckpointError("checkpoint counters are malformed");
  load_parameters(net_->store(), ck);
  for (std::size_t i = 0; i < trainable_.size(); ++i) {
    const std::string name = "opt.velocity." + trainable_[i]->name;
    velocity_[i] = ck.contains(name) ? ck.tensor(name) : Tensor();
  }
  rng_ = rng_from_state(ck.u64("meta.rng"));
  epoch_ = counters[0];
  step_ = counters[1];
  total_steps_ = counters[2];
}

TrainConfig config_from_checkpoint(const Checkpoint& ck) {
  try {
    return TrainConfig::from_json(ck.string("meta.config"));
  } catch (const ConfigError& e) {
    throw CorruptCheckpointError(std::string("checkpoint config: ") + e.what());
  }
}

std::unique_ptr<SegmentationNet> model_from_checkpoint(const Checkpoint& ck) {
  const TrainConfig cfg = config_from_checkpoint(ck);
  ModelConfig m = cfg.model;
  m.seed = cfg.seed;
  auto net = build_model(m);
  load_parameters(net->store(), ck);
  return net;
}

}  // namespace cvfc
