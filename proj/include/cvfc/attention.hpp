#pragma once

#include <random>
#include <string>

#include "cvfc/cam_head.hpp"

namespace cvfc {

/// Query/key projections Q = W_Q F, K = W_K F over flattened positions.
struct QueryKey {
  Var query;  // [N, Ck, P]
  Var key;    // [N, Ck, P]
};

/// feat [N,Cf,H,W] with W_Q, W_K [Ck,Cf] -> Q, K [N,Ck,H*W].
QueryKey project_qk(const Var& feat, const Var& w_query, const Var& w_key);

/// A[n] = softmax(s * Q[n]^T K[n]) over the last axis: each row of the
/// [N,P,P] result is a distribution over key positions.
Var attention_matrix(const QueryKey& qk, double logit_scale = 1.0);

/// Pools maps [N,C,H,W] to out_h x out_w, flattens to [N,C,P] and mixes
/// positions with the attention rows: out(c,j) = sum_i A(j,i) M(c,i).
/// Returns [N,C,out_h,out_w]; no normalization.
Var attend_cam(const Var& maps, const Var& attention, std::size_t out_h, std::size_t out_w);

/// Keeps, at every position, only the largest class activation (ties go to
/// the lowest class index); all other classes become 0.
Tensor suppress_non_max(const Tensor& maps);

/// attend_cam, then normalize_cam, then suppress_non_max.
CamStack refine_cam(const CamStack& cs, const Tensor& attention, std::size_t out_h, std::size_t out_w);

/// uniform: independent draws in +-1/sqrt(in_channels). identity: W_Q = W_K =
/// the first proj_dim rows of the identity, so A starts as a softmax over
/// feature inner products.
enum class QkInit { uniform, identity };

std::string to_string(QkInit q);
QkInit qk_init_from_string(const std::string& s);

class QKProjection {
 public:
  QKProjection() = default;
  /// No bias.
  QKProjection(ParameterStore& store, const std::string& name, std::size_t in_channels, std::size_t proj_dim,
               std::mt19937_64& rng, DType dtype, QkInit init = QkInit::uniform);

  QueryKey forward(Graph& g, const Var& feat) const;
  std::vector<Parameter*> parameters() const { return {w_query_, w_key_}; }
  Parameter& w_query() const { return *w_query_; }
  Parameter& w_key() const { return *w_key_; }

 private:
  Parameter* w_query_ = nullptr;
  Parameter* w_key_ = nullptr;
};

}  // namespace cvfc
