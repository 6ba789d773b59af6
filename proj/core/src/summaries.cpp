#include "scabi/summaries.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

namespace scabi::summaries {

void SummarySpec::validate() const {
  require(input_dim >= 1 && rows_per_set >= 1, "summary: data shape must be positive");
  require(embedding_dim >= 1 && output_dim >= 1, "summary: output sizes must be positive");
}

void to_json(nlohmann::json& j, const SummarySpec& s) {
  j = nlohmann::json{{"input_dim", s.input_dim},
                     {"rows_per_set", s.rows_per_set},
                     {"encoder_hidden", s.encoder_hidden},
                     {"embedding_dim", s.embedding_dim},
                     {"decoder_hidden", s.decoder_hidden},
                     {"output_dim", s.output_dim},
                     {"activation", nn::to_string(s.activation)},
                     {"attention", s.attention}};
}

void from_json(const nlohmann::json& j, SummarySpec& s) {
  s = SummarySpec{};
  s.input_dim = j.value("input_dim", 1);
  s.rows_per_set = j.value("rows_per_set", 1);
  s.encoder_hidden = j.value("encoder_hidden", s.encoder_hidden);
  s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
  s.decoder_hidden = j.value("decoder_hidden", s.decoder_hidden);
  s.output_dim = j.value("output_dim", s.output_dim);
  s.activation = nn::activation_from_string(j.value("activation", std::string("silu")));
  s.attention = j.value("attention", false);
}

Matrix canonical_rows(const Matrix& data, int rows_per_set, int input_dim) {
  require(rows_per_set >= 1, "summary: empty data set");
  require(data.cols() == static_cast<Index>(rows_per_set) * input_dim, "summary: data width mismatch");
  const Index j = rows_per_set;
  Matrix out(data.rows() * j, input_dim);
  std::vector<int> order(static_cast<std::size_t>(j));
  for (Index i = 0; i < data.rows(); ++i) {
    auto at = [&](int r, int c) { return data(i, static_cast<Index>(r) * input_dim + c); };
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      for (int c = 0; c < input_dim; ++c) {
        if (at(a, c) != at(b, c)) return at(a, c) < at(b, c);
      }
      return false;
    });
    for (Index r = 0; r < j; ++r) {
      for (int c = 0; c < input_dim; ++c) out(i * j + r, c) = at(order[static_cast<std::size_t>(r)], c);
    }
  }
  return out;
}

SummaryNet::SummaryNet(const SummarySpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  input_norm_ = flows::Standardizer::identity(spec_.input_dim);
  encoder_ = nn::Mlp(spec_.input_dim, spec_.encoder_hidden, spec_.embedding_dim, spec_.activation, rng,
                     "summary.encoder");
  if (spec_.attention) {
    query_ = nn::Dense(spec_.embedding_dim, spec_.embedding_dim, rng, "summary.query");
    key_ = nn::Dense(spec_.embedding_dim, spec_.embedding_dim, rng, "summary.key");
    value_ = nn::Dense(spec_.embedding_dim, spec_.embedding_dim, rng, "summary.value");
  }
  decoder_ = nn::Mlp(spec_.embedding_dim, spec_.decoder_hidden, spec_.output_dim, spec_.activation, rng,
                     "summary.decoder");
}

void SummaryNet::set_input_standardizer(flows::Standardizer s) {
  require(s.shift.size() == spec_.input_dim, "summary: standardizer dimension mismatch");
  input_norm_ = std::move(s);
}

ad::Var SummaryNet::forward(ad::Tape& tape, const Matrix& data) const {
  require(data.rows() >= 1, "summary: empty batch");
  const Matrix rows = input_norm_.apply(canonical_rows(data, spec_.rows_per_set, spec_.input_dim));
  ad::Var h = nn::activate(encoder_.forward(tape.constant(rows)), spec_.activation);
  if (spec_.attention) {
    h = ad::add(h, ad::set_attention(query_.forward(h), key_.forward(h), value_.forward(h), spec_.rows_per_set));
  }
  return decoder_.forward(ad::segment_mean(h, spec_.rows_per_set));
}

Matrix SummaryNet::summarize(const Matrix& data) const {
  ad::Tape tape(false);
  return forward(tape, data).value();
}

RowVector SummaryNet::summarize_set(const Matrix& rows) const {
  require(rows.rows() == spec_.rows_per_set && rows.cols() == spec_.input_dim, "summary: data set shape mismatch");
  Matrix flat(1, rows.size());
  for (Index r = 0; r < rows.rows(); ++r) flat.block(0, r * rows.cols(), 1, rows.cols()) = rows.row(r);
  return summarize(flat).row(0);
}

void SummaryNet::collect_parameters(ad::ParameterList& out) {
  encoder_.collect_parameters(out);
  if (spec_.attention) {
    query_.collect_parameters(out);
    key_.collect_parameters(out);
    value_.collect_parameters(out);
  }
  decoder_.collect_parameters(out);
}

}  // namespace scabi::summaries
