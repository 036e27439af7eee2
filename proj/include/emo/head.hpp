#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emo/backend.hpp"
#include "emo/corpus.hpp"

namespace emo {

using FeatureVector = std::vector<double>;
/// Per-label inclusion flags; 0 marks a label absent for the sample's language.
using LabelMask = std::vector<std::uint8_t>;

/// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

/// Weights of out = sigmoid(tanh(h * hidden) * output); no bias terms.
struct HeadParams {
  Matrix hidden;  // d x m
  Matrix output;  // m x K

  std::size_t feature_dim() const noexcept { return hidden.rows(); }
  std::size_t hidden_dim() const noexcept { return hidden.cols(); }
  std::size_t num_labels() const noexcept { return output.cols(); }
  void check() const;

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

/// Glorot-uniform initialization from a seeded generator.
HeadParams init_head(std::size_t feature_dim, std::size_t hidden_dim, std::size_t num_labels, std::uint64_t seed);

/// Hashed bag of character 2/3/4-grams over NFC-normalized, lowercased text
/// framed as "^text$". Signed hashing, L2-normalized. Empty text maps to zeros.
FeatureVector featurize(std::string_view text, std::size_t dim, std::uint64_t seed);

/// Lowercased NFC form used by featurize.
std::string normalize_text(std::string_view text);

/// Source of sentence feature vectors for the head.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual FeatureVector features(const Sample& s) const = 0;
  virtual std::string describe() const = 0;
};

class HashedNgramFeatures : public FeatureProvider {
 public:
  HashedNgramFeatures(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  std::size_t dim() const override { return dim_; }
  FeatureVector features(const Sample& s) const override { return featurize(s.text, dim_, seed_); }
  std::string describe() const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Vectors fetched from an embedding service (`POST /v1/embeddings`,
/// dimension from `GET /capabilities`) and cached by sample id.
class RemoteEmbeddingFeatures : public FeatureProvider {
 public:
  explicit RemoteEmbeddingFeatures(std::string endpoint, std::size_t batch_size = 32);
  /// Fetches vectors for every sample of the dataset in batches.
  void prefetch(const Dataset& d);
  std::size_t dim() const override { return dim_; }
  FeatureVector features(const Sample& s) const override;
  std::string describe() const override { return "remote:" + endpoint_; }

 private:
  std::vector<FeatureVector> fetch(const std::vector<std::string>& texts) const;

  std::string endpoint_;
  std::size_t batch_size_;
  std::size_t dim_ = 0;
  std::map<std::string, FeatureVector> cache_;
};

/// Per-label probabilities in (0, 1).
std::vector<double> head_forward(const HeadParams& p, std::span<const double> h);

/// Mean over unmasked labels of the clamped binary cross-entropy.
/// `mask[k] == 0` excludes label k. Throws when every label is masked.
double bce_loss(std::span<const double> probs, std::span<const double> gold,
                std::span<const std::uint8_t> mask = {});

struct HeadGradients {
  Matrix hidden;
  Matrix output;
};

/// Analytic gradients of bce_loss(head_forward(p, h), gold, mask). Targets
/// may be soft (in [0, 1]).
HeadGradients head_gradients(const HeadParams& p, std::span<const double> h, std::span<const double> gold,
                             std::span<const std::uint8_t> mask = {});

struct TrainConfig {
  double learning_rate = 3e-4;
  int epochs = 6;
  std::size_t batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
  std::size_t hidden_dim = 0;  // 0 = feature dimension
  double threshold = 0.5;

  void validate() const;
};

struct AdamState {
  HeadGradients m;
  HeadGradients v;
  std::uint64_t step = 0;
};

AdamState init_adam(const HeadParams& p);

/// One decoupled-weight-decay Adam update with bias correction.
void adamw_step(HeadParams& p, const HeadGradients& g, AdamState& state, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_macro_f1 = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
  HeadParams params;  // from the epoch with the best dev macro-F1
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

/// Mini-batch AdamW over seeded shuffles; keeps the best epoch on dev.
TrainResult train_head(const Dataset& train, const Dataset& dev, const FeatureProvider& features,
                       const TrainConfig& cfg);

/// Label k is active iff its probability is >= threshold.
LabelAssignment head_predict(const HeadParams& p, std::span<const double> h, const LabelSchema& schema,
                             double threshold = 0.5);

struct HeadCheckpoint {
  HeadParams params;
  LabelSchema schema;
  TrainConfig config;
  std::string features;  // FeatureProvider::describe()
  std::size_t feature_dim = 0;
  std::uint64_t feature_seed = 0;
};

std::string checkpoint_to_json(const HeadCheckpoint& c);
HeadCheckpoint checkpoint_from_json(std::string_view json);
void save_checkpoint(const HeadCheckpoint& c, const std::filesystem::path& path);
HeadCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Serves prompts from a trained head. Base prompts answer with the active
/// label list; pairwise prompts answer yes/no and report first-token
/// log-probabilities ln p and ln(1 - p). Track A only.
class HeadBackend : public Backend {
 public:
  HeadBackend(HeadParams params, LabelSchema schema, std::shared_ptr<const FeatureProvider> features,
              double threshold = 0.5);
  std::string name() const override { return "head"; }

 protected:
  Completion do_complete(const PromptInstance& p, const GenerationConfig& cfg) override;

 private:
  HeadParams params_;
  LabelSchema schema_;
  std::shared_ptr<const FeatureProvider> features_;
  double threshold_;
};

}  // namespace emo
