#include "flowinv/networks.hpp"

#include "nn_ops.hpp"

#include <cmath>
#include <string>

namespace flowinv {

using nn::expand;
using nn::fill_normal;
using nn::layer_norm;
using nn::layer_norm_backward;
using nn::reduce;

namespace {

// Six modulation chunks per stream and block, each `hidden` wide.
enum Chunk { kShift1 = 0, kScale1, kGate1, kShift2, kScale2, kGate2, kChunks };

MatrixXd chunk(const MatrixXd& mod, int which, Eigen::Index h) { return mod.middleCols(which * h, h); }

}  // namespace

struct MiniDiT::Cache {
  struct Stream {
    MatrixXd mod;  // B x 6h
    MatrixXd x_in, n1, m1, q, k, v, o, proj, y, n2, m2, z, a, f;
    VectorXd inv1, inv2;
  };
  struct Block {
    Stream text, data;
    std::vector<MatrixXd> probs;  // per sample, (j + n) x (j + n)
  };
  MatrixXd patches, temb, t1, c, sc;
  std::vector<Block> blocks;
  MatrixXd final_mod, nf, mf;
  VectorXd invf;
  MatrixXd data_out;  // final data tokens (B*n x h)
};

MiniDiT::MiniDiT(MiniDiTConfig cfg) : cfg_(cfg) {
  if (cfg_.vocab < 1 || cfg_.null_token < 0 || cfg_.null_token >= cfg_.vocab || cfg_.text_len < 1 ||
      cfg_.data_tokens < 1 || cfg_.patch_dim < 1 || cfg_.hidden < 1 || cfg_.ffn < 1 || cfg_.blocks < 1)
    throw InvalidArgument("MiniDiT: invalid configuration");
  const Eigen::Index h = cfg_.hidden;
  ids_.tok_emb = layout_.add("tok_emb", cfg_.vocab, h);
  ids_.txt_pos = layout_.add("txt_pos", cfg_.text_len, h);
  ids_.patch_w = layout_.add("patch_w", cfg_.patch_dim, h);
  ids_.patch_b = layout_.add("patch_b", 1, h);
  ids_.dat_pos = layout_.add("dat_pos", cfg_.data_tokens, h);
  ids_.time_w1 = layout_.add("time_w1", cfg_.time_embed, h);
  ids_.time_b1 = layout_.add("time_b1", 1, h);
  ids_.time_w2 = layout_.add("time_w2", h, h);
  ids_.time_b2 = layout_.add("time_b2", 1, h);
  for (int l = 0; l < cfg_.blocks; ++l) {
    BlockParams bp{};
    for (int s = 0; s < 2; ++s) {
      const std::string p = "block" + std::to_string(l) + (s == 0 ? ".text." : ".data.");
      StreamParams sp{};
      sp.mod_w = layout_.add(p + "mod_w", h, kChunks * h);
      sp.mod_b = layout_.add(p + "mod_b", 1, kChunks * h);
      sp.wq = layout_.add(p + "wq", h, h);
      sp.wk = layout_.add(p + "wk", h, h);
      sp.wv = layout_.add(p + "wv", h, h);
      sp.wo = layout_.add(p + "wo", h, h);
      sp.bo = layout_.add(p + "bo", 1, h);
      sp.w1 = layout_.add(p + "ffn_w1", h, cfg_.ffn);
      sp.b1 = layout_.add(p + "ffn_b1", 1, cfg_.ffn);
      sp.w2 = layout_.add(p + "ffn_w2", cfg_.ffn, h);
      sp.b2 = layout_.add(p + "ffn_b2", 1, h);
      (s == 0 ? bp.text : bp.data) = sp;
    }
    ids_.blocks.push_back(bp);
  }
  ids_.final_mod_w = layout_.add("final_mod_w", h, 2 * h);
  ids_.final_mod_b = layout_.add("final_mod_b", 1, 2 * h);
  ids_.head_w = layout_.add("head_w", h, cfg_.patch_dim);
  ids_.head_b = layout_.add("head_b", 1, cfg_.patch_dim);
  params_ = VectorXd::Zero(layout_.size());
}

// Modulation projections and the output head start at zero, so every gate
// is closed and the initial velocity is identically zero.
MiniDiT::MiniDiT(MiniDiTConfig cfg, RngStream& rng) : MiniDiT(cfg) {
  const double h = cfg_.hidden;
  fill_normal(layout_.view(params_, ids_.tok_emb), rng, 1.0);
  fill_normal(layout_.view(params_, ids_.txt_pos), rng, 1.0);
  fill_normal(layout_.view(params_, ids_.patch_w), rng, 1.0 / std::sqrt(static_cast<double>(cfg_.patch_dim)));
  fill_normal(layout_.view(params_, ids_.dat_pos), rng, 1.0);
  fill_normal(layout_.view(params_, ids_.time_w1), rng, 1.0 / std::sqrt(static_cast<double>(cfg_.time_embed)));
  fill_normal(layout_.view(params_, ids_.time_w2), rng, 1.0 / std::sqrt(h));
  for (const auto& bp : ids_.blocks) {
    for (const StreamParams* sp : {&bp.text, &bp.data}) {
      fill_normal(layout_.view(params_, sp->wq), rng, 1.0 / std::sqrt(h));
      fill_normal(layout_.view(params_, sp->wk), rng, 1.0 / std::sqrt(h));
      fill_normal(layout_.view(params_, sp->wv), rng, 1.0 / std::sqrt(h));
      fill_normal(layout_.view(params_, sp->wo), rng, 1.0 / std::sqrt(h));
      fill_normal(layout_.view(params_, sp->w1), rng, 1.0 / std::sqrt(h));
      fill_normal(layout_.view(params_, sp->w2), rng, 1.0 / std::sqrt(static_cast<double>(cfg_.ffn)));
    }
  }
}

nlohmann::json MiniDiT::architecture() const {
  return {{"arch", "minidit"},         {"vocab", cfg_.vocab},       {"null_token", cfg_.null_token},
          {"text_len", cfg_.text_len}, {"data_tokens", cfg_.data_tokens}, {"patch_dim", cfg_.patch_dim},
          {"hidden", cfg_.hidden},     {"ffn", cfg_.ffn},           {"blocks", cfg_.blocks},
          {"time_embed", cfg_.time_embed}};
}

void MiniDiT::check_tokens(const TokenMatrix& tokens, Eigen::Index rows) const {
  if (tokens.rows() != rows || tokens.cols() != cfg_.text_len)
    throw InvalidArgument("MiniDiT: token matrix must be " + std::to_string(rows) + " x " +
                          std::to_string(cfg_.text_len));
  for (Eigen::Index i = 0; i < tokens.size(); ++i)
    if (tokens.data()[i] < 0 || tokens.data()[i] >= cfg_.vocab)
      throw InvalidArgument("MiniDiT: unknown token id " + std::to_string(tokens.data()[i]));
}

MatrixXd MiniDiT::predict(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens) const {
  return run(x, sigmas, tokens, nullptr, nullptr);
}

MatrixXd MiniDiT::forward(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens,
                          ForwardHooks* hooks) const {
  return run(x, sigmas, tokens, hooks, nullptr);
}

MatrixXd MiniDiT::run(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens, ForwardHooks* hooks,
                      Cache* cache) const {
  const Eigen::Index batch = x.rows();
  const Eigen::Index h = cfg_.hidden;
  const Eigen::Index nt = cfg_.text_len;
  const Eigen::Index nd = cfg_.data_tokens;
  const Eigen::Index p = cfg_.patch_dim;
  if (x.cols() != cfg_.data_dim()) throw InvalidArgument("MiniDiT: state dimension mismatch");
  if (sigmas.size() != batch) throw InvalidArgument("MiniDiT: one sigma per row required");
  check_tokens(tokens, batch);
  const VectorXd& P = params_;
  const auto& L = layout_;

  // Conditioning vector from sigma.
  const MatrixXd temb = time_embedding(sigmas, cfg_.time_embed);
  const MatrixXd t1 = (temb * L.view(P, ids_.time_w1)).rowwise() + L.row(P, ids_.time_b1);
  const MatrixXd c = (silu(t1) * L.view(P, ids_.time_w2)).rowwise() + L.row(P, ids_.time_b2);
  const MatrixXd sc = silu(c);

  // Token embeddings.
  MatrixXd text(batch * nt, h);
  const auto tok_emb = L.view(P, ids_.tok_emb);
  const auto txt_pos = L.view(P, ids_.txt_pos);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index k = 0; k < nt; ++k) text.row(b * nt + k) = tok_emb.row(tokens(b, k)) + txt_pos.row(k);

  MatrixXd patches(batch * nd, p);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index i = 0; i < nd; ++i) patches.row(b * nd + i) = x.row(b).segment(i * p, p);
  MatrixXd data = (patches * L.view(P, ids_.patch_w)).rowwise() + L.row(P, ids_.patch_b);
  const auto dat_pos = L.view(P, ids_.dat_pos);
  for (Eigen::Index b = 0; b < batch; ++b) data.middleRows(b * nd, nd) += dat_pos;

  if (cache != nullptr) {
    cache->patches = patches;
    cache->temb = temb;
    cache->t1 = t1;
    cache->c = c;
    cache->sc = sc;
    cache->blocks.assign(static_cast<std::size_t>(cfg_.blocks), {});
  }

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(h));
  const Eigen::Index m = nt + nd;
  const bool pre_mod_hook = hooks != nullptr && hooks->feature_point() == FeaturePoint::pre_modulation;

  for (int l = 0; l < cfg_.blocks; ++l) {
    const BlockParams& bp = ids_.blocks[static_cast<std::size_t>(l)];
    Cache::Block scratch;
    Cache::Block& bc = cache != nullptr ? cache->blocks[static_cast<std::size_t>(l)] : scratch;

    // Pre-attention: modulation, norm, projections.
    auto pre = [&](const StreamParams& sp, const MatrixXd& in, Eigen::Index tokens_per, Cache::Stream& st,
                   bool is_text) {
      st.mod = (sc * L.view(P, sp.mod_w)).rowwise() + L.row(P, sp.mod_b);
      st.x_in = in;
      st.n1 = layer_norm(in, st.inv1);
      if (is_text && pre_mod_hook) hooks->text_features(l, st.n1);
      st.m1 = st.n1.cwiseProduct((expand(chunk(st.mod, kScale1, h), tokens_per).array() + 1.0).matrix()) +
              expand(chunk(st.mod, kShift1, h), tokens_per);
      if (is_text && hooks != nullptr && !pre_mod_hook) hooks->text_features(l, st.m1);
      st.q = st.m1 * L.view(P, sp.wq);
      st.k = st.m1 * L.view(P, sp.wk);
      st.v = st.m1 * L.view(P, sp.wv);
    };
    pre(bp.text, text, nt, bc.text, true);
    pre(bp.data, data, nd, bc.data, false);

    if (hooks != nullptr) {
      AttentionInputs qkv{bc.text.q, bc.text.k, bc.text.v, bc.data.q, bc.data.k, bc.data.v};
      hooks->attention_inputs(l, qkv);
      bc.text.q = std::move(qkv.q_text);
      bc.text.k = std::move(qkv.k_text);
      bc.text.v = std::move(qkv.v_text);
      bc.data.q = std::move(qkv.q_data);
      bc.data.k = std::move(qkv.k_data);
      bc.data.v = std::move(qkv.v_data);
    }

    // Joint attention per sample over [text; data].
    bc.text.o.resize(batch * nt, h);
    bc.data.o.resize(batch * nd, h);
    if (cache != nullptr) bc.probs.resize(static_cast<std::size_t>(batch));
    MatrixXd q(m, h), k(m, h), v(m, h);
    for (Eigen::Index b = 0; b < batch; ++b) {
      q << bc.text.q.middleRows(b * nt, nt), bc.data.q.middleRows(b * nd, nd);
      k << bc.text.k.middleRows(b * nt, nt), bc.data.k.middleRows(b * nd, nd);
      v << bc.text.v.middleRows(b * nt, nt), bc.data.v.middleRows(b * nd, nd);
      MatrixXd scores = attn_scale * (q * k.transpose());
      for (Eigen::Index r = 0; r < m; ++r) {
        const double top = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - top).exp().matrix();
        scores.row(r) /= scores.row(r).sum();
      }
      const MatrixXd out = scores * v;
      bc.text.o.middleRows(b * nt, nt) = out.topRows(nt);
      bc.data.o.middleRows(b * nd, nd) = out.bottomRows(nd);
      if (cache != nullptr) bc.probs[static_cast<std::size_t>(b)] = std::move(scores);
    }

    // Post-attention: gated residual and feed-forward.
    auto post = [&](const StreamParams& sp, Eigen::Index tokens_per, Cache::Stream& st) {
      st.proj = (st.o * L.view(P, sp.wo)).rowwise() + L.row(P, sp.bo);
      st.y = st.x_in + expand(chunk(st.mod, kGate1, h), tokens_per).cwiseProduct(st.proj);
      st.n2 = layer_norm(st.y, st.inv2);
      st.m2 = st.n2.cwiseProduct((expand(chunk(st.mod, kScale2, h), tokens_per).array() + 1.0).matrix()) +
              expand(chunk(st.mod, kShift2, h), tokens_per);
      st.z = (st.m2 * L.view(P, sp.w1)).rowwise() + L.row(P, sp.b1);
      st.a = silu(st.z);
      st.f = (st.a * L.view(P, sp.w2)).rowwise() + L.row(P, sp.b2);
      return MatrixXd(st.y + expand(chunk(st.mod, kGate2, h), tokens_per).cwiseProduct(st.f));
    };
    text = post(bp.text, nt, bc.text);
    data = post(bp.data, nd, bc.data);
  }

  // Final modulated norm and linear head on data tokens.
  const MatrixXd final_mod = (sc * L.view(P, ids_.final_mod_w)).rowwise() + L.row(P, ids_.final_mod_b);
  VectorXd invf;
  const MatrixXd nf = layer_norm(data, invf);
  const MatrixXd mf = nf.cwiseProduct((expand(final_mod.rightCols(h), nd).array() + 1.0).matrix()) +
                      expand(final_mod.leftCols(h), nd);
  const MatrixXd out_tokens = (mf * L.view(P, ids_.head_w)).rowwise() + L.row(P, ids_.head_b);

  MatrixXd out(batch, nd * p);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index i = 0; i < nd; ++i) out.row(b).segment(i * p, p) = out_tokens.row(b * nd + i);

  if (cache != nullptr) {
    cache->final_mod = final_mod;
    cache->nf = nf;
    cache->mf = mf;
    cache->invf = invf;
    cache->data_out = data;
  }
  return out;
}

double MiniDiT::regression_loss(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens,
                                const MatrixXd& target, VectorXd* grad) const {
  if (target.rows() != x.rows() || target.cols() != x.cols()) throw InvalidArgument("MiniDiT: target shape mismatch");
  Cache cache;
  const MatrixXd out = run(x, sigmas, tokens, nullptr, grad != nullptr ? &cache : nullptr);
  const double batch = static_cast<double>(x.rows());
  const MatrixXd residual = out - target;
  const double loss = residual.squaredNorm() / batch;
  if (grad != nullptr) backward(cache, tokens, (2.0 / batch) * residual, *grad);
  return loss;
}

void MiniDiT::backward(const Cache& cache, const TokenMatrix& tokens, const MatrixXd& d_out, VectorXd& grad) const {
  const Eigen::Index batch = d_out.rows();
  const Eigen::Index h = cfg_.hidden;
  const Eigen::Index nt = cfg_.text_len;
  const Eigen::Index nd = cfg_.data_tokens;
  const Eigen::Index p = cfg_.patch_dim;
  const Eigen::Index m = nt + nd;
  const VectorXd& P = params_;
  const auto& L = layout_;
  grad.setZero(L.size());

  MatrixXd d_out_tokens(batch * nd, p);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index i = 0; i < nd; ++i) d_out_tokens.row(b * nd + i) = d_out.row(b).segment(i * p, p);

  // Head and final modulation.
  L.view(grad, ids_.head_w) = cache.mf.transpose() * d_out_tokens;
  L.row(grad, ids_.head_b) = d_out_tokens.colwise().sum();
  const MatrixXd d_mf = d_out_tokens * L.view(P, ids_.head_w).transpose();
  MatrixXd d_final_mod(batch, 2 * h);
  d_final_mod.leftCols(h) = reduce(d_mf, nd);
  d_final_mod.rightCols(h) = reduce(d_mf.cwiseProduct(cache.nf), nd);
  const MatrixXd d_nf = d_mf.cwiseProduct((expand(cache.final_mod.rightCols(h), nd).array() + 1.0).matrix());
  MatrixXd d_data = layer_norm_backward(d_nf, cache.nf, cache.invf);
  MatrixXd d_text = MatrixXd::Zero(batch * nt, h);
  L.view(grad, ids_.final_mod_w) = cache.sc.transpose() * d_final_mod;
  L.row(grad, ids_.final_mod_b) = d_final_mod.colwise().sum();
  MatrixXd d_sc = d_final_mod * L.view(P, ids_.final_mod_w).transpose();

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(h));

  for (int l = cfg_.blocks - 1; l >= 0; --l) {
    const BlockParams& bp = ids_.blocks[static_cast<std::size_t>(l)];
    const Cache::Block& bc = cache.blocks[static_cast<std::size_t>(l)];

    // Post-attention backward; returns d(attention output), accumulates
    // d(block input) into d_in and the modulation gradient into d_mod.
    auto post_back = [&](const StreamParams& sp, Eigen::Index tokens_per, const Cache::Stream& st,
                         const MatrixXd& d_next, MatrixXd& d_in, MatrixXd& d_mod) {
      d_mod.setZero(batch, kChunks * h);
      MatrixXd d_y = d_next;
      d_mod.middleCols(kGate2 * h, h) = reduce(d_next.cwiseProduct(st.f), tokens_per);
      const MatrixXd d_f = d_next.cwiseProduct(expand(chunk(st.mod, kGate2, h), tokens_per));
      L.view(grad, sp.w2) += st.a.transpose() * d_f;
      L.row(grad, sp.b2) += d_f.colwise().sum();
      const MatrixXd d_z = (d_f * L.view(P, sp.w2).transpose()).cwiseProduct(silu_grad(st.z));
      L.view(grad, sp.w1) += st.m2.transpose() * d_z;
      L.row(grad, sp.b1) += d_z.colwise().sum();
      const MatrixXd d_m2 = d_z * L.view(P, sp.w1).transpose();
      d_mod.middleCols(kShift2 * h, h) = reduce(d_m2, tokens_per);
      d_mod.middleCols(kScale2 * h, h) = reduce(d_m2.cwiseProduct(st.n2), tokens_per);
      const MatrixXd d_n2 =
          d_m2.cwiseProduct((expand(chunk(st.mod, kScale2, h), tokens_per).array() + 1.0).matrix());
      d_y += layer_norm_backward(d_n2, st.n2, st.inv2);
      d_in = d_y;
      d_mod.middleCols(kGate1 * h, h) = reduce(d_y.cwiseProduct(st.proj), tokens_per);
      const MatrixXd d_proj = d_y.cwiseProduct(expand(chunk(st.mod, kGate1, h), tokens_per));
      L.view(grad, sp.wo) += st.o.transpose() * d_proj;
      L.row(grad, sp.bo) += d_proj.colwise().sum();
      return MatrixXd(d_proj * L.view(P, sp.wo).transpose());
    };

    MatrixXd d_text_in, d_data_in, d_mod_text, d_mod_data;
    const MatrixXd d_o_text = post_back(bp.text, nt, bc.text, d_text, d_text_in, d_mod_text);
    const MatrixXd d_o_data = post_back(bp.data, nd, bc.data, d_data, d_data_in, d_mod_data);

    // Joint attention backward.
    MatrixXd d_q_text(batch * nt, h), d_k_text(batch * nt, h), d_v_text(batch * nt, h);
    MatrixXd d_q_data(batch * nd, h), d_k_data(batch * nd, h), d_v_data(batch * nd, h);
    MatrixXd q(m, h), k(m, h), v(m, h), d_o(m, h);
    for (Eigen::Index b = 0; b < batch; ++b) {
      q << bc.text.q.middleRows(b * nt, nt), bc.data.q.middleRows(b * nd, nd);
      k << bc.text.k.middleRows(b * nt, nt), bc.data.k.middleRows(b * nd, nd);
      v << bc.text.v.middleRows(b * nt, nt), bc.data.v.middleRows(b * nd, nd);
      d_o << d_o_text.middleRows(b * nt, nt), d_o_data.middleRows(b * nd, nd);
      const MatrixXd& probs = bc.probs[static_cast<std::size_t>(b)];
      const MatrixXd d_v = probs.transpose() * d_o;
      const MatrixXd d_probs = d_o * v.transpose();
      const VectorXd row_dot = d_probs.cwiseProduct(probs).rowwise().sum();
      const MatrixXd d_scores = probs.cwiseProduct(d_probs.colwise() - row_dot);
      const MatrixXd d_q = attn_scale * (d_scores * k);
      const MatrixXd d_k = attn_scale * (d_scores.transpose() * q);
      d_q_text.middleRows(b * nt, nt) = d_q.topRows(nt);
      d_q_data.middleRows(b * nd, nd) = d_q.bottomRows(nd);
      d_k_text.middleRows(b * nt, nt) = d_k.topRows(nt);
      d_k_data.middleRows(b * nd, nd) = d_k.bottomRows(nd);
      d_v_text.middleRows(b * nt, nt) = d_v.topRows(nt);
      d_v_data.middleRows(b * nd, nd) = d_v.bottomRows(nd);
    }

    // Pre-attention backward.
    auto pre_back = [&](const StreamParams& sp, Eigen::Index tokens_per, const Cache::Stream& st,
                        const MatrixXd& d_q, const MatrixXd& d_k, const MatrixXd& d_v, MatrixXd& d_in,
                        MatrixXd& d_mod) {
      L.view(grad, sp.wq) += st.m1.transpose() * d_q;
      L.view(grad, sp.wk) += st.m1.transpose() * d_k;
      L.view(grad, sp.wv) += st.m1.transpose() * d_v;
      const MatrixXd d_m1 = d_q * L.view(P, sp.wq).transpose() + d_k * L.view(P, sp.wk).transpose() +
                            d_v * L.view(P, sp.wv).transpose();
      d_mod.middleCols(kShift1 * h, h) = reduce(d_m1, tokens_per);
      d_mod.middleCols(kScale1 * h, h) = reduce(d_m1.cwiseProduct(st.n1), tokens_per);
      const MatrixXd d_n1 =
          d_m1.cwiseProduct((expand(chunk(st.mod, kScale1, h), tokens_per).array() + 1.0).matrix());
      d_in += layer_norm_backward(d_n1, st.n1, st.inv1);
      L.view(grad, sp.mod_w) += cache.sc.transpose() * d_mod;
      L.row(grad, sp.mod_b) += d_mod.colwise().sum();
      d_sc += d_mod * L.view(P, sp.mod_w).transpose();
    };
    pre_back(bp.text, nt, bc.text, d_q_text, d_k_text, d_v_text, d_text_in, d_mod_text);
    pre_back(bp.data, nd, bc.data, d_q_data, d_k_data, d_v_data, d_data_in, d_mod_data);
    d_text = std::move(d_text_in);
    d_data = std::move(d_data_in);
  }

  // Embeddings.
  auto g_tok = L.view(grad, ids_.tok_emb);
  auto g_txt_pos = L.view(grad, ids_.txt_pos);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index k = 0; k < nt; ++k) {
      g_tok.row(tokens(b, k)) += d_text.row(b * nt + k);
      g_txt_pos.row(k) += d_text.row(b * nt + k);
    }
  L.view(grad, ids_.patch_w) = cache.patches.transpose() * d_data;
  L.row(grad, ids_.patch_b) = d_data.colwise().sum();
  auto g_dat_pos = L.view(grad, ids_.dat_pos);
  for (Eigen::Index b = 0; b < batch; ++b) g_dat_pos += d_data.middleRows(b * nd, nd);

  // Timestep embedding MLP.
  const MatrixXd d_c = d_sc.cwiseProduct(silu_grad(cache.c));
  const MatrixXd s_t1 = silu(cache.t1);
  L.view(grad, ids_.time_w2) = s_t1.transpose() * d_c;
  L.row(grad, ids_.time_b2) = d_c.colwise().sum();
  const MatrixXd d_t1 = (d_c * L.view(P, ids_.time_w2).transpose()).cwiseProduct(silu_grad(cache.t1));
  L.view(grad, ids_.time_w1) = cache.temb.transpose() * d_t1;
  L.row(grad, ids_.time_b1) = d_t1.colwise().sum();
}

}  // namespace flowinv
