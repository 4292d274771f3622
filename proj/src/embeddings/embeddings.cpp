#include "unite/embeddings/embeddings.hpp"

#include <cmath>

#include "unite/error.hpp"
#include "unite/random.hpp"

namespace unite::embeddings {

using ad::Tensor;
using ad::Var;

void EmbeddingConfig::validate() const {
  const TransformerConfig& t = transformer;
  if (vocab_size <= data::kFirstCodeId) throw ConfigError("vocab_size must exceed the reserved ids");
  if (t.n_blocks < 1) throw ConfigError("transformer depth must be at least 1");
  if (t.n_heads < 1 || t.model_dim % t.n_heads != 0) throw ConfigError("model_dim must be divisible by n_heads");
  if (t.max_len < 1) throw ConfigError("max_len must be at least 1");
  if (t.model_dim == 0 || t.feedforward_dim == 0 || ehr_dim == 0 || tabular_hidden == 0 || tabular_dim == 0 ||
      fused_dim == 0 || demographics_dim == 0 || location_dim == 0) {
    throw ConfigError("embedding dimensions must be positive");
  }
}

namespace {

void column_moments(const std::vector<const std::vector<double>*>& rows, std::vector<double>& mean,
                    std::vector<double>& scale) {
  const std::size_t d = rows.front()->size();
  mean.assign(d, 0.0);
  scale.assign(d, 0.0);
  for (const auto* r : rows)
    for (std::size_t k = 0; k < d; ++k) mean[k] += (*r)[k];
  for (double& m : mean) m /= static_cast<double>(rows.size());
  for (const auto* r : rows)
    for (std::size_t k = 0; k < d; ++k) scale[k] += ((*r)[k] - mean[k]) * ((*r)[k] - mean[k]);
  for (double& s : scale) {
    s = std::sqrt(s / static_cast<double>(rows.size()));
    if (!(s > 1e-12)) s = 1.0;
  }
}

Tensor standardized(const std::vector<double>& x, const std::vector<double>& mean, const std::vector<double>& scale) {
  Tensor out({1, x.size()});
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = (x[k] - mean[k]) / scale[k];
  return out;
}

Tensor gaussian(Rng& rng, std::size_t rows, std::size_t cols, double sd) {
  Tensor t = standard_normal(rng, {rows, cols});
  for (double& x : t.data()) x *= sd;
  return t;
}

void add_dense(ad::ParameterSet& p, Rng& rng, const std::string& prefix, std::size_t in, std::size_t out,
               bool trainable) {
  p.add(prefix + ".w", gaussian(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))), trainable);
  p.add(prefix + ".b", Tensor({1, out}), trainable);
}

void add_norm(ad::ParameterSet& p, const std::string& prefix, std::size_t dim) {
  p.add(prefix + ".gain", Tensor({1, dim}, 1.0));
  p.add(prefix + ".bias", Tensor({1, dim}));
}

Var dense(ad::Scope& s, const std::string& prefix, Var x) {
  return ad::add_row(ad::matmul(x, s.param(prefix + ".w")), s.param(prefix + ".b"));
}

Var norm(ad::Scope& s, const std::string& prefix, Var x) {
  return ad::add_row(ad::mul_row(ad::layer_norm_rows(x), s.param(prefix + ".gain")), s.param(prefix + ".bias"));
}

std::string block_name(std::size_t b) { return "ehr.block" + std::to_string(b); }

bool is_network_parameter(const std::string& name) {
  return name.starts_with("ehr.") || name.starts_with("demo.") || name.starts_with("loc.") ||
         name.starts_with("fuse.");
}

}  // namespace

Standardizer Standardizer::fit(const data::Cohort& cohort, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DataError("cannot fit feature scaling on an empty set of patients");
  std::vector<const std::vector<double>*> demo, loc;
  for (std::size_t i : rows) {
    demo.push_back(&cohort.features.at(i).demographics);
    loc.push_back(&cohort.features.at(i).location);
  }
  Standardizer s;
  column_moments(demo, s.demographics_mean, s.demographics_scale);
  column_moments(loc, s.location_mean, s.location_scale);
  return s;
}

Batch make_batch(const data::Cohort& cohort, std::span<const std::size_t> rows, const Standardizer& scaler) {
  if (rows.empty()) throw DataError("empty batch");
  if (scaler.empty()) throw ContractError("feature scaling has not been fit");
  Batch b;
  b.size = rows.size();
  b.seq_len = cohort.max_len;
  const std::size_t dd = scaler.demographics_mean.size(), dl = scaler.location_mean.size();
  b.demographics = Tensor({b.size, dd});
  b.location = Tensor({b.size, dl});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const data::MedicalCodeSequence& seq = cohort.sequences.at(rows[r]);
    const data::TabularFeatures& f = cohort.features.at(rows[r]);
    if (seq.tokens.size() != b.seq_len) throw DataError("patient '" + seq.patient_id + "': token count differs from max_len");
    if (f.demographics.size() != dd || f.location.size() != dl) {
      throw DataError("patient '" + seq.patient_id + "': tabular dimension differs from the fitted scaling");
    }
    for (std::size_t t = 0; t < b.seq_len; ++t) {
      const bool content = t < seq.length;
      b.tokens.push_back(seq.tokens[t]);
      b.key_mask.push_back(content ? 1 : 0);
      b.pool_weights.push_back(content ? 1.0 / static_cast<double>(seq.length) : 0.0);
    }
    const Tensor d = standardized(f.demographics, scaler.demographics_mean, scaler.demographics_scale);
    const Tensor l = standardized(f.location, scaler.location_mean, scaler.location_scale);
    std::copy(d.data().begin(), d.data().end(), b.demographics.data().begin() + static_cast<std::ptrdiff_t>(r * dd));
    std::copy(l.data().begin(), l.data().end(), b.location.data().begin() + static_cast<std::ptrdiff_t>(r * dl));
    b.labels.push_back(seq.label);
    b.patient_ids.push_back(seq.patient_id);
  }
  return b;
}

void init_parameters(ad::ParameterSet& p, const EmbeddingConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng = make_rng(seed, Stream::init);
  const std::size_t d = c.transformer.model_dim;
  p.add("ehr.embedding", gaussian(rng, c.vocab_size, d, 0.02));
  for (std::size_t b = 0; b < c.transformer.n_blocks; ++b) {
    const std::string name = block_name(b);
    for (const char* proj : {".query", ".key", ".value", ".out"}) add_dense(p, rng, name + proj, d, d, true);
    add_norm(p, name + ".norm1", d);
    add_dense(p, rng, name + ".ff1", d, c.transformer.feedforward_dim, true);
    add_dense(p, rng, name + ".ff2", c.transformer.feedforward_dim, d, true);
    add_norm(p, name + ".norm2", d);
  }
  add_dense(p, rng, "ehr.proj", d, c.ehr_dim, true);

  add_dense(p, rng, "demo.l1", c.demographics_dim, c.tabular_hidden, c.use_demographics);
  add_dense(p, rng, "demo.l2", c.tabular_hidden, c.tabular_dim, c.use_demographics);
  add_dense(p, rng, "loc.l1", c.location_dim, c.tabular_hidden, c.use_location);
  add_dense(p, rng, "loc.l2", c.tabular_hidden, c.tabular_dim, c.use_location);

  p.add("fuse.w_d", Tensor({1, c.ehr_dim}, 1.0));
  p.add("fuse.w_s", Tensor({1, c.tabular_dim}, 1.0), c.use_demographics);
  p.add("fuse.w_g", Tensor({1, c.tabular_dim}, 1.0), c.use_location);
  add_dense(p, rng, "fuse.proj", c.concat_dim(), c.fused_dim, true);
  add_dense(p, rng, "head", c.fused_dim, 2, true);
}

std::vector<std::string> network_parameter_names(const ad::ParameterSet& params) {
  std::vector<std::string> out;
  for (const std::string& name : params.names())
    if (is_network_parameter(name)) out.push_back(name);
  return out;
}

Tensor positional_encoding(std::size_t seq_len, std::size_t dim) {
  Tensor pe({seq_len, dim});
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      pe(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Var embed_ehr(ad::Scope& s, const EmbeddingConfig& c, const Batch& batch) {
  const std::size_t L = batch.seq_len, d = c.transformer.model_dim;
  if (L != c.transformer.max_len) {
    throw ShapeError("embed_ehr: sequence length " + std::to_string(L) + " differs from max_len " +
                     std::to_string(c.transformer.max_len));
  }
  for (std::size_t i = 0; i < batch.size; ++i) {
    if (batch.key_mask[i * L] == 0) throw DataError("patient '" + batch.patient_ids[i] + "': no content tokens");
  }
  for (std::size_t id : batch.tokens) {
    if (id >= c.vocab_size) throw DataError("token id " + std::to_string(id) + " outside the vocabulary");
  }

  const Tensor pe = positional_encoding(L, d);
  Tensor tiled({batch.size * L, d});
  for (std::size_t i = 0; i < batch.size; ++i)
    std::copy(pe.data().begin(), pe.data().end(), tiled.data().begin() + static_cast<std::ptrdiff_t>(i * L * d));

  Var x = ad::add(ad::gather_rows(s.param("ehr.embedding"), batch.tokens), s.tape().constant(std::move(tiled)));
  for (std::size_t b = 0; b < c.transformer.n_blocks; ++b) {
    const std::string name = block_name(b);
    Var q = dense(s, name + ".query", x);
    Var k = dense(s, name + ".key", x);
    Var v = dense(s, name + ".value", x);
    Var attended = dense(s, name + ".out", ad::attention(q, k, v, L, c.transformer.n_heads, batch.key_mask));
    x = norm(s, name + ".norm1", ad::add(x, attended));
    Var ff = dense(s, name + ".ff2", ad::relu(dense(s, name + ".ff1", x)));
    x = norm(s, name + ".norm2", ad::add(x, ff));
  }
  return dense(s, "ehr.proj", ad::pool_segments(x, batch.pool_weights, L));
}

Var embed_tabular(ad::Scope& s, const std::string& prefix, Var x) {
  const std::size_t expected = s.parameters().at(prefix + ".l1.w").rows();
  if (x.value().cols() != expected) {
    throw ShapeError(prefix + ": input dimension " + std::to_string(x.value().cols()) + " differs from " +
                     std::to_string(expected));
  }
  return dense(s, prefix + ".l2", ad::relu(dense(s, prefix + ".l1", x)));
}

Var fuse(Var hd, Var hs, Var hg, Var wd, Var ws, Var wg) {
  auto check = [](Var h, Var w, const char* which) {
    if (h.value().rank() != 2 || w.value().size() != h.value().cols()) {
      throw ShapeError(std::string("fuse: weight ") + which + " has shape " + ad::shape_string(w.shape()) +
                       ", embedding has " + ad::shape_string(h.shape()));
    }
  };
  check(hd, wd, "W_d");
  check(hs, ws, "W_s");
  check(hg, wg, "W_g");
  if (hs.value().rows() != hd.value().rows() || hg.value().rows() != hd.value().rows()) {
    throw ShapeError("fuse: modality embeddings differ in patient count");
  }
  return ad::concat_cols({ad::mul_row(hd, wd), ad::mul_row(hs, ws), ad::mul_row(hg, wg)});
}

Var fused_latent(ad::Scope& s, const EmbeddingConfig& c, const Batch& batch) {
  Var hd = embed_ehr(s, c, batch);
  ad::Tape& tape = s.tape();
  Var hs = c.use_demographics ? embed_tabular(s, "demo", tape.constant(batch.demographics))
                              : tape.constant(Tensor({batch.size, c.tabular_dim}));
  Var hg = c.use_location ? embed_tabular(s, "loc", tape.constant(batch.location))
                          : tape.constant(Tensor({batch.size, c.tabular_dim}));
  Var v = fuse(hd, hs, hg, s.param("fuse.w_d"), s.param("fuse.w_s"), s.param("fuse.w_g"));
  if (v.value().cols() != c.concat_dim()) throw ShapeError("fuse: output width differs from the sum of modality widths");
  return dense(s, "fuse.proj", v);
}

Var head_logits(ad::Scope& s, Var latent) { return dense(s, "head", latent); }

}  // namespace unite::embeddings
