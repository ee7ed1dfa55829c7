#pragma once

// Embedding-space analytics: class-token embeddings, sliced Wasserstein
// distances, exact t-SNE, cross-region RMSE matrices, distance/error rank
// correlation, and CSV/SVG report output.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sarssl/finetune.hpp"
#include "sarssl/tensor.hpp"
#include "sarssl/tiles.hpp"
#include "sarssl/vit.hpp"

namespace sarssl::analysis {

struct EmbeddingRow {
  std::string tile_id;
  std::string region;
  std::optional<double> label;
  std::optional<double> abs_error;
  std::vector<float> vector;
};

struct EmbeddingSet {
  int dim = 0;
  std::vector<EmbeddingRow> rows;

  void validate() const;
  [[nodiscard]] EmbeddingSet slice(const std::string& region) const;
  [[nodiscard]] std::vector<std::string> regions() const;  // first-seen order
  // rows × dim, row-major.
  [[nodiscard]] std::vector<double> matrix() const;
};

// Class token after the final layer norm for the first `cap_per_region`
// tiles of each region, in input order. cap 0 keeps every tile.
EmbeddingSet extract_embeddings(std::span<const tiles::Tile> tiles,
                                const tensor::ParamStore<float>& params,
                                const vit::VitConfig& cfg, std::size_t cap_per_region = 2000);

// `tile_id,region,label,v0..v{d-1}`; an absent label is an empty field.
std::string embeddings_to_csv(const EmbeddingSet& set);
EmbeddingSet embeddings_from_csv(const std::string& text);

// ---------------------------------------------------------------------------
// Sliced Wasserstein distance

// (mean_i |a_i − b_i|^p)^{1/p} over two sorted samples of equal length.
double wasserstein_1d(std::span<const double> a_sorted, std::span<const double> b_sorted,
                      double order);

struct SwdOptions {
  int n_projections = 10000;
  int n_seeds = 10;
  double order = 2.0;
  std::uint64_t seed = 0;
};

struct SwdReport {
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
  int n_seeds = 0;
  int n_projections = 0;
  double order = 2.0;
  std::vector<double> per_seed;
};

// `a`, `b`: row-major samples with `dim` columns. The larger set is
// resampled with replacement to the size of the smaller one, per seed.
SwdReport swd(std::span<const double> a, std::span<const double> b, int dim,
              const SwdOptions& opts = {});
SwdReport swd(const EmbeddingSet& a, const EmbeddingSet& b, const SwdOptions& opts = {});

struct SwdEntry {
  std::string region_a;
  std::string region_b;
  SwdReport report;
};
// `region_a,region_b,mean,std,seeds,projections,order`
std::string swd_csv(std::span<const SwdEntry> entries);
std::vector<SwdEntry> swd_from_csv(const std::string& text);

// ---------------------------------------------------------------------------
// t-SNE

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  int exaggeration_iterations = 250;
  int momentum_switch = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
};

struct Affinities {
  int n = 0;
  std::vector<double> p;        // n × n symmetric joint probabilities
  std::vector<double> entropy;  // realized conditional entropy per point, bits
  std::vector<double> beta;     // per-point precision 1/(2σ²)
};

// Conditional Gaussians with bisection on each precision until the entropy
// is log2(perplexity) ± 1e-5 bits, then P = (P + Pᵀ) / 2n.
Affinities tsne_affinities(std::span<const double> x, int n, int dim, double perplexity);

struct TsneLayout {
  int n = 0;
  std::vector<double> coords;  // n × 2
  double initial_kl = 0.0;
  double final_kl = 0.0;
  double perplexity = 0.0;
  int iterations = 0;
};

TsneLayout tsne_fit(std::span<const double> x, int n, int dim, const TsneOptions& opts = {});
TsneLayout tsne_fit(const EmbeddingSet& set, const TsneOptions& opts = {});

// KL(P || Q) for a layout under the Student-t kernel.
double tsne_kl(std::span<const double> p, std::span<const double> coords, int n);

// ---------------------------------------------------------------------------
// Cross-region evaluation

struct FinetunedModel {
  std::string name;  // fine-tune region, or "combined"
  // Backbone plus decoder; absent when the checkpoint is missing.
  std::optional<tensor::ParamStore<float>> params;
};

struct TestSet {
  std::string region;
  std::vector<tiles::Tile> tiles;
};

// Rows are fine-tuned models, columns are inference regions.
struct EvalMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<std::optional<double>> cells;  // rows × cols

  [[nodiscard]] const std::optional<double>& at(std::size_t r, std::size_t c) const {
    return cells.at(r * cols.size() + c);
  }
};

EvalMatrix eval_matrix(std::span<const FinetunedModel> models, std::span<const TestSet> tests,
                       const vit::VitConfig& cfg, finetune::DecoderInput input);

// Header `finetune_region,<col>...`; absent cells are empty fields.
std::string eval_matrix_csv(const EvalMatrix& m);
EvalMatrix eval_matrix_from_csv(const std::string& text);

struct Correlation {
  double rho = 0.0;
  std::size_t n = 0;
  // Set when either ranking is constant and rho is reported as 0.
  bool degenerate_ties = false;
};

// Spearman correlation (average ranks for ties) of two equal-length samples.
Correlation spearman(std::span<const double> x, std::span<const double> y);

// Distance of each inference embedding to the fine-tune set's centroid,
// rank-correlated with the inference rows' absolute errors.
Correlation distance_error_correlation(const EmbeddingSet& infer, const EmbeddingSet& finetune);

// ---------------------------------------------------------------------------
// Reports

enum class ColorBy { log_label, abs_error };

struct Scatter {
  std::string name;
  TsneLayout layout;
  std::vector<double> values;  // one per point, already transformed
  ColorBy color_by = ColorBy::log_label;
};

// log(1 + label) or |error| per row, as selected.
std::vector<double> scatter_values(const EmbeddingSet& set, ColorBy by);

// 256-entry RGB table interpolated piecewise-linearly between five
// viridis anchors: #440154, #3b528b, #21918c, #5ec962, #fde725.
std::string colormap_hex(int index);

std::string scatter_svg(const Scatter& s);

struct NamedMatrix {
  std::string name;
  EvalMatrix matrix;
};

struct ReportInputs {
  std::vector<Scatter> scatters;
  std::vector<SwdEntry> swd;
  std::vector<NamedMatrix> matrices;
};

// Writes <name>.csv for every scatter (tsne coordinates), swd.csv when SWD
// entries exist, eval_<name>.csv per matrix, <name>.svg per scatter, and
// index.csv listing `kind,name,file`. Returns the written file names.
std::vector<std::string> emit_report(const ReportInputs& inputs, const std::filesystem::path& dir);

}  // namespace sarssl::analysis
