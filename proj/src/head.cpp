#include "emo/head.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>
#include <unicode/locid.h>

#include "emo/eval.hpp"
#include "httplib.h"
#include "json.hpp"

namespace emo {

namespace {

constexpr double kClamp = 1e-12;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// [0, 1) from the top 53 bits; independent of the standard library's distributions.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check_mask(std::span<const std::uint8_t> mask, std::size_t k) {
  if (!mask.empty() && mask.size() != k)
    throw ShapeError("mask has " + std::to_string(mask.size()) + " entries for " + std::to_string(k) + " labels");
}

bool unmasked(std::span<const std::uint8_t> mask, std::size_t k) { return mask.empty() || mask[k] != 0; }

}  // namespace

void HeadParams::check() const {
  if (hidden.rows() == 0 || hidden.cols() == 0 || output.cols() == 0) throw ShapeError("head has an empty dimension");
  if (hidden.cols() != output.rows())
    throw ShapeError("hidden is " + std::to_string(hidden.rows()) + "x" + std::to_string(hidden.cols()) +
                     " but output has " + std::to_string(output.rows()) + " rows");
}

HeadParams init_head(std::size_t feature_dim, std::size_t hidden_dim, std::size_t num_labels, std::uint64_t seed) {
  if (feature_dim == 0 || hidden_dim == 0 || num_labels == 0) throw ShapeError("head dimensions must be positive");
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& m, std::size_t fan_in, std::size_t fan_out) {
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& w : m.data()) w = (2.0 * unit_uniform(rng) - 1.0) * a;
  };
  HeadParams p{Matrix(feature_dim, hidden_dim), Matrix(hidden_dim, num_labels)};
  fill(p.hidden, feature_dim, hidden_dim);
  fill(p.output, hidden_dim, num_labels);
  return p;
}

std::string normalize_text(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorCategory::io, "ICU NFC normalizer unavailable");
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  u = nfc->normalize(u, status);
  u.toLower(icu::Locale::getRoot());
  u = nfc->normalize(u, status);
  if (U_FAILURE(status)) throw DataError("cannot normalize text");
  std::string out;
  u.toUTF8String(out);
  return out;
}

FeatureVector featurize(std::string_view text, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ShapeError("feature dimension must be >= 1");
  FeatureVector signed_counts(dim, 0.0);
  if (text.empty()) return signed_counts;

  const std::string norm = normalize_text(text);
  // Code point boundaries of "^" + norm + "$".
  const std::string framed = "^" + norm + "$";
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < framed.size(); ++i) {
    if ((static_cast<unsigned char>(framed[i]) & 0xC0) != 0x80) starts.push_back(i);
  }
  starts.push_back(framed.size());
  const std::size_t n_cp = starts.size() - 1;

  FeatureVector unsigned_counts(dim, 0.0);
  for (std::size_t n = 2; n <= 4; ++n) {
    for (std::size_t i = 0; i + n <= n_cp; ++i) {
      std::string_view gram(framed.data() + starts[i], starts[i + n] - starts[i]);
      std::uint64_t h = stable_hash(gram, seed ^ (n * 0x9E3779B97F4A7C15ULL));
      std::size_t bucket = static_cast<std::size_t>(h % dim);
      signed_counts[bucket] += (h >> 63) ? -1.0 : 1.0;
      unsigned_counts[bucket] += 1.0;
    }
  }

  auto l2 = [](const FeatureVector& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  double norm2 = l2(signed_counts);
  FeatureVector& out = norm2 > 0 ? signed_counts : unsigned_counts;
  if (norm2 == 0) norm2 = l2(unsigned_counts);
  for (double& x : out) x /= norm2;
  return std::move(out);
}

std::string HashedNgramFeatures::describe() const {
  return "hashed-ngram:dim=" + std::to_string(dim_) + ";seed=" + std::to_string(seed_);
}

RemoteEmbeddingFeatures::RemoteEmbeddingFeatures(std::string endpoint, std::size_t batch_size)
    : endpoint_(std::move(endpoint)), batch_size_(std::max<std::size_t>(batch_size, 1)) {
  httplib::Client client(endpoint_);
  auto res = client.Get("/capabilities");
  if (!res) throw BackendError(BackendErrorKind::transport, "capabilities request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw BackendError(BackendErrorKind::http_status, "capabilities returned HTTP " + std::to_string(res->status),
                       res->status);
  try {
    auto j = nlohmann::json::parse(res->body);
    dim_ = j.at("embedding_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(BackendErrorKind::malformed_response, std::string("capabilities: ") + e.what());
  }
  if (dim_ == 0) throw BackendError(BackendErrorKind::malformed_response, "capabilities advertise dimension 0");
}

std::vector<FeatureVector> RemoteEmbeddingFeatures::fetch(const std::vector<std::string>& texts) const {
  httplib::Client client(endpoint_);
  nlohmann::json body{{"input", texts}};
  auto res = client.Post("/v1/embeddings", body.dump(), "application/json");
  if (!res) throw BackendError(BackendErrorKind::transport, "embedding request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw BackendError(BackendErrorKind::http_status, "embeddings returned HTTP " + std::to_string(res->status),
                       res->status);
  std::vector<FeatureVector> out;
  try {
    auto j = nlohmann::json::parse(res->body);
    for (const auto& item : j.at("data")) out.push_back(item.at("embedding").get<FeatureVector>());
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(BackendErrorKind::malformed_response, std::string("embeddings: ") + e.what());
  }
  if (out.size() != texts.size())
    throw BackendError(BackendErrorKind::malformed_response, "embedding count does not match the batch");
  for (const auto& v : out) {
    if (v.size() != dim_) throw BackendError(BackendErrorKind::malformed_response, "embedding dimension mismatch");
    for (double x : v) {
      if (!std::isfinite(x)) throw BackendError(BackendErrorKind::malformed_response, "non-finite embedding value");
    }
  }
  return out;
}

void RemoteEmbeddingFeatures::prefetch(const Dataset& d) {
  std::vector<const Sample*> pending;
  for (const Sample& s : d.samples()) {
    if (!cache_.count(s.id)) pending.push_back(&s);
  }
  for (std::size_t i = 0; i < pending.size(); i += batch_size_) {
    std::vector<std::string> texts;
    std::size_t end = std::min(pending.size(), i + batch_size_);
    for (std::size_t k = i; k < end; ++k) texts.push_back(pending[k]->text);
    auto vecs = fetch(texts);
    for (std::size_t k = i; k < end; ++k) cache_[pending[k]->id] = std::move(vecs[k - i]);
  }
}

FeatureVector RemoteEmbeddingFeatures::features(const Sample& s) const {
  auto it = cache_.find(s.id);
  if (it != cache_.end()) return it->second;
  return fetch({s.text}).front();
}

namespace {

struct ForwardCache {
  std::vector<double> hidden;  // tanh activations
  std::vector<double> probs;
};

ForwardCache forward(const HeadParams& p, std::span<const double> h) {
  p.check();
  if (h.size() != p.feature_dim())
    throw ShapeError("feature vector has " + std::to_string(h.size()) + " entries, head expects " +
                     std::to_string(p.feature_dim()));
  const std::size_t m = p.hidden_dim(), k = p.num_labels();
  ForwardCache c{std::vector<double>(m, 0.0), std::vector<double>(k, 0.0)};
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h[i] == 0.0) continue;
    for (std::size_t j = 0; j < m; ++j) c.hidden[j] += h[i] * p.hidden(i, j);
  }
  for (double& a : c.hidden) a = std::tanh(a);
  std::vector<double> logits(k, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t q = 0; q < k; ++q) logits[q] += c.hidden[j] * p.output(j, q);
  }
  for (std::size_t q = 0; q < k; ++q) c.probs[q] = sigmoid(logits[q]);
  return c;
}

// Accumulates `scale` times the sample gradient into g; returns the sample loss.
double accumulate_gradients(const HeadParams& p, std::span<const double> h, std::span<const double> gold,
                            std::span<const std::uint8_t> mask, double scale, HeadGradients& g) {
  ForwardCache c = forward(p, h);
  const std::size_t m = p.hidden_dim(), k = p.num_labels();
  if (gold.size() != k) throw ShapeError("gold has " + std::to_string(gold.size()) + " entries for " + std::to_string(k) + " labels");
  check_mask(mask, k);
  const double loss = bce_loss(c.probs, gold, mask);

  std::size_t n = 0;
  for (std::size_t q = 0; q < k; ++q) n += unmasked(mask, q);
  std::vector<double> d_logit(k, 0.0);
  for (std::size_t q = 0; q < k; ++q) {
    if (!unmasked(mask, q)) continue;
    const double pq = c.probs[q];
    if (pq < kClamp || pq > 1.0 - kClamp) continue;  // clamped: flat loss
    d_logit[q] = (pq - gold[q]) / static_cast<double>(n);
  }
  std::vector<double> d_pre(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double da = 0.0;
    for (std::size_t q = 0; q < k; ++q) {
      g.output(j, q) += scale * c.hidden[j] * d_logit[q];
      da += p.output(j, q) * d_logit[q];
    }
    d_pre[j] = da * (1.0 - c.hidden[j] * c.hidden[j]);
  }
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h[i] == 0.0) continue;
    for (std::size_t j = 0; j < m; ++j) g.hidden(i, j) += scale * h[i] * d_pre[j];
  }
  return loss;
}

HeadGradients zero_like(const HeadParams& p) {
  return {Matrix(p.hidden.rows(), p.hidden.cols()), Matrix(p.output.rows(), p.output.cols())};
}

}  // namespace

std::vector<double> head_forward(const HeadParams& p, std::span<const double> h) { return forward(p, h).probs; }

double bce_loss(std::span<const double> probs, std::span<const double> gold, std::span<const std::uint8_t> mask) {
  if (probs.size() != gold.size()) throw ShapeError("probability and gold vectors differ in length");
  check_mask(mask, probs.size());
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (!unmasked(mask, k)) continue;
    const double y = gold[k];
    if (!(y >= 0.0 && y <= 1.0)) throw DataError("gold values must lie in [0, 1]");
    const double p = std::clamp(probs[k], kClamp, 1.0 - kClamp);
    sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    ++n;
  }
  if (n == 0) throw DataError("bce_loss: every label is masked");
  return sum / static_cast<double>(n);
}

HeadGradients head_gradients(const HeadParams& p, std::span<const double> h, std::span<const double> gold,
                             std::span<const std::uint8_t> mask) {
  HeadGradients g = zero_like(p);
  accumulate_gradients(p, h, gold, mask, 1.0, g);
  return g;
}

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!(learning_rate > 0.0)) problems.push_back("learning_rate must be > 0");
  if (epochs < 1) problems.push_back("epochs must be >= 1");
  if (batch_size < 1) problems.push_back("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) problems.push_back("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) problems.push_back("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) problems.push_back("epsilon must be > 0");
  if (!(weight_decay >= 0.0)) problems.push_back("weight_decay must be >= 0");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

AdamState init_adam(const HeadParams& p) { return {zero_like(p), zero_like(p), 0}; }

void adamw_step(HeadParams& p, const HeadGradients& g, AdamState& state, const TrainConfig& cfg) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  auto update = [&](Matrix& w, const Matrix& grad, Matrix& m, Matrix& v) {
    if (grad.rows() != w.rows() || grad.cols() != w.cols() || m.rows() != w.rows() || m.cols() != w.cols())
      throw ShapeError("optimizer state does not match parameter shape");
    auto wd = w.data();
    auto gd = grad.data();
    auto md = m.data();
    auto vd = v.data();
    for (std::size_t i = 0; i < wd.size(); ++i) {
      wd[i] *= decay;
      md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
      vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      const double m_hat = md[i] / bc1;
      const double v_hat = vd[i] / bc2;
      wd[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  };
  update(p.hidden, g.hidden, state.m.hidden, state.v.hidden);
  update(p.output, g.output, state.m.output, state.v.output);
}

namespace {

struct Encoded {
  std::vector<FeatureVector> features;
  std::vector<std::vector<double>> gold;
  std::vector<LabelMask> masks;
};

Encoded encode(const Dataset& d, const LabelSchema& schema, const FeatureProvider& fp) {
  Encoded e;
  for (const Sample& s : d.samples()) {
    if (!s.gold) throw DataError("training sample '" + s.id + "' is unlabeled");
    FeatureVector f = fp.features(s);
    if (f.size() != fp.dim()) throw ShapeError("feature provider returned a vector of the wrong size");
    std::vector<double> y(schema.size(), 0.0);
    LabelMask mask(schema.size(), 0);
    for (std::size_t k = 0; k < schema.size(); ++k) {
      if (!s.gold->has(schema.labels()[k])) continue;
      mask[k] = 1;
      y[k] = s.gold->value(schema.labels()[k]) > 0 ? 1.0 : 0.0;
    }
    e.features.push_back(std::move(f));
    e.gold.push_back(std::move(y));
    e.masks.push_back(std::move(mask));
  }
  return e;
}

}  // namespace

TrainResult train_head(const Dataset& train, const Dataset& dev, const FeatureProvider& features,
                       const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("empty training set");
  if (train.track() != Track::A) throw DataError("the classification head targets Track A");
  if (!dev.empty() && !(dev.schema() == train.schema())) throw DataError("train and dev schemas differ");
  const LabelSchema& schema = train.schema();

  const Encoded tr = encode(train, schema, features);
  const Encoded dv = encode(dev, schema, features);
  std::vector<Prediction> dev_gold = predictions_from_dataset(dev);

  const std::size_t hidden = cfg.hidden_dim ? cfg.hidden_dim : features.dim();
  HeadParams params = init_head(features.dim(), hidden, schema.size(), cfg.seed);
  AdamState state = init_adam(params);
  std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);

  TrainResult result;
  double best_f1 = -1.0;
  std::vector<std::size_t> order(tr.features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      HeadGradients g = zero_like(params);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        loss_sum += accumulate_gradients(params, tr.features[i], tr.gold[i], tr.masks[i], scale, g);
      }
      adamw_step(params, g, state, cfg);
    }

    double dev_f1 = 0.0;
    if (!dev.empty()) {
      std::vector<Prediction> preds;
      for (std::size_t i = 0; i < dv.features.size(); ++i)
        preds.push_back({dev.samples()[i].id, head_predict(params, dv.features[i], schema, cfg.threshold)});
      dev_f1 = macro_f1(preds, dev_gold, schema).aggregate;
    }
    result.history.push_back({epoch, loss_sum / static_cast<double>(order.size()), dev_f1});
    // Without a dev set the last epoch wins.
    if (dev.empty() || dev_f1 > best_f1) {
      best_f1 = dev_f1;
      result.params = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

LabelAssignment head_predict(const HeadParams& p, std::span<const double> h, const LabelSchema& schema,
                             double threshold) {
  if (schema.size() != p.num_labels())
    throw ShapeError("schema has " + std::to_string(schema.size()) + " labels, head has " +
                     std::to_string(p.num_labels()));
  const auto probs = head_forward(p, h);
  LabelAssignment a{schema.track(), {}};
  for (std::size_t k = 0; k < schema.size(); ++k) a.values[schema.labels()[k]] = probs[k] >= threshold ? 1 : 0;
  return a;
}

std::string checkpoint_to_json(const HeadCheckpoint& c) {
  c.params.check();
  nlohmann::ordered_json j;
  j["format"] = "emo-head-v1";
  j["feature_dim"] = c.params.feature_dim();
  j["hidden_dim"] = c.params.hidden_dim();
  j["num_labels"] = c.params.num_labels();
  j["labels"] = c.schema.labels();
  j["track"] = to_string(c.schema.track());
  j["seed"] = c.config.seed;
  j["features"] = c.features;
  j["feature_seed"] = c.feature_seed;
  j["config"] = {{"learning_rate", c.config.learning_rate}, {"epochs", c.config.epochs},
                 {"batch_size", c.config.batch_size},       {"beta1", c.config.beta1},
                 {"beta2", c.config.beta2},                 {"epsilon", c.config.epsilon},
                 {"weight_decay", c.config.weight_decay},   {"hidden_dim", c.config.hidden_dim},
                 {"threshold", c.config.threshold}};
  j["hidden"] = std::vector<double>(c.params.hidden.data().begin(), c.params.hidden.data().end());
  j["output"] = std::vector<double>(c.params.output.data().begin(), c.params.output.data().end());
  return j.dump();
}

HeadCheckpoint checkpoint_from_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    if (j.at("format") != "emo-head-v1") throw DataError("unknown checkpoint format");
    HeadCheckpoint c;
    const auto d = j.at("feature_dim").get<std::size_t>();
    const auto m = j.at("hidden_dim").get<std::size_t>();
    const auto k = j.at("num_labels").get<std::size_t>();
    c.schema = LabelSchema(j.at("labels").get<std::vector<std::string>>(), parse_track(j.at("track").get<std::string>()));
    c.features = j.at("features").get<std::string>();
    c.feature_seed = j.at("feature_seed").get<std::uint64_t>();
    c.feature_dim = d;
    const auto& cfg = j.at("config");
    c.config.learning_rate = cfg.at("learning_rate");
    c.config.epochs = cfg.at("epochs");
    c.config.batch_size = cfg.at("batch_size");
    c.config.beta1 = cfg.at("beta1");
    c.config.beta2 = cfg.at("beta2");
    c.config.epsilon = cfg.at("epsilon");
    c.config.weight_decay = cfg.at("weight_decay");
    c.config.hidden_dim = cfg.at("hidden_dim");
    c.config.threshold = cfg.at("threshold");
    c.config.seed = j.at("seed");
    auto hidden = j.at("hidden").get<std::vector<double>>();
    auto output = j.at("output").get<std::vector<double>>();
    if (hidden.size() != d * m || output.size() != m * k) throw ShapeError("checkpoint weight arrays do not match shapes");
    if (c.schema.size() != k) throw ShapeError("checkpoint label count does not match num_labels");
    c.params = {Matrix(d, m), Matrix(m, k)};
    std::copy(hidden.begin(), hidden.end(), c.params.hidden.data().begin());
    std::copy(output.begin(), output.end(), c.params.output.data().begin());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid checkpoint: ") + e.what());
  }
}

void save_checkpoint(const HeadCheckpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << checkpoint_to_json(c) << '\n';
}

HeadCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

HeadBackend::HeadBackend(HeadParams params, LabelSchema schema, std::shared_ptr<const FeatureProvider> features,
                         double threshold)
    : params_(std::move(params)), schema_(std::move(schema)), features_(std::move(features)), threshold_(threshold) {
  params_.check();
  if (schema_.track() != Track::A) throw ConfigError({"the head backend serves Track A only"});
  if (schema_.size() != params_.num_labels()) throw ShapeError("schema size does not match head outputs");
  if (features_->dim() != params_.feature_dim()) throw ShapeError("feature dimension does not match head input");
}

Completion HeadBackend::do_complete(const PromptInstance& p, const GenerationConfig& cfg) {
  if (p.track != Track::A)
    throw BackendError(BackendErrorKind::unsupported, "the head backend serves Track A only");
  Sample s{p.sample_id, "", extract_sentence(p), std::nullopt};
  const auto probs = head_forward(params_, features_->features(s));
  const LabelSchema native(extract_label_set(p), Track::A);
  auto prob_of = [&](const std::string& label) {
    auto k = schema_.index_of(label);
    if (!k) throw BackendError(BackendErrorKind::unsupported, "head has no output for label '" + label + "'");
    return probs[*k];
  };

  LabelAssignment a = zero_assignment(native);
  for (const auto& l : native.labels()) a.values[l] = prob_of(l) >= threshold_ ? 1 : 0;
  Completion c{render_completion(a, native, p.strategy, p.target_label), std::nullopt};
  if (cfg.want_logprobs && p.strategy == Strategy::pairwise) {
    const double py = std::clamp(prob_of(*p.target_label), kClamp, 1.0 - kClamp);
    c.first_token_alternatives = std::vector<TokenLogprob>{{"yes", std::log(py)}, {"no", std::log1p(-py)}};
  }
  return c;
}

}  // namespace emo
