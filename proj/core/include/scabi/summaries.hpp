#pragma once

#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scabi/autodiff.hpp"
#include "scabi/flows.hpp"
#include "scabi/nn.hpp"

namespace scabi::summaries {

struct SummarySpec {
  int input_dim = 1;        // d, columns of one observation row
  int rows_per_set = 1;     // J
  std::vector<int> encoder_hidden{64, 64};
  int embedding_dim = 64;   // h, width of the pooled representation
  std::vector<int> decoder_hidden{64};
  int output_dim = 16;      // s
  nn::Activation activation = nn::Activation::kSilu;
  // One residual self-attention block over the encoded rows before pooling.
  bool attention = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const SummarySpec& spec);
void from_json(const nlohmann::json& j, SummarySpec& spec);

// DeepSet: encoder per observation row, mean pooling, decoder.
//
// Data sets arrive flattened: each batch row holds J observations of d values
// in row-major order. Rows of every set are put into a canonical
// (lexicographic) order first, so the output is bitwise invariant to the
// order in which observations are supplied, with or without attention.
class SummaryNet {
 public:
  SummaryNet() = default;
  SummaryNet(const SummarySpec& spec, Rng& rng);

  const SummarySpec& spec() const { return spec_; }
  int output_dim() const { return spec_.output_dim; }

  // Standardization of the observation columns (fitted on training rows).
  const flows::Standardizer& input_standardizer() const { return input_norm_; }
  void set_input_standardizer(flows::Standardizer s);

  // data: n x (J*d) -> n x s.
  ad::Var forward(ad::Tape& tape, const Matrix& data) const;
  Matrix summarize(const Matrix& data) const;

  // Summary of a single data set given as J x d rows.
  RowVector summarize_set(const Matrix& rows) const;

  nn::Mlp& encoder() { return encoder_; }
  nn::Mlp& decoder() { return decoder_; }
  void collect_parameters(ad::ParameterList& out);

 private:
  SummarySpec spec_;
  flows::Standardizer input_norm_;
  nn::Mlp encoder_;
  nn::Dense query_;
  nn::Dense key_;
  nn::Dense value_;
  nn::Mlp decoder_;
};

// Stacks the J x d observation rows of every batch item into (n*J) x d,
// each set sorted lexicographically.
Matrix canonical_rows(const Matrix& data, int rows_per_set, int input_dim);

}  // namespace scabi::summaries
