#pragma once

// Predictor heads and the loss zoo: mapping loss, MLM loss, in-batch
// sequence-item contrastive loss, the combined pretraining objective, the
// full-softmax finetuning loss, and the BPR ablation variant.

#include <optional>
#include <vector>

#include "jepa4rec/masking.hpp"
#include "jepa4rec/model.hpp"
#include "jepa4rec/tensor.hpp"

namespace jepa4rec {

// Two-layer feed-forward 2d -> d -> d with GELU between.
inline Var apply_predictor(Tape& tape, const Var& input, Parameter& w1,
                           Parameter& b1, Parameter& w2, Parameter& b2) {
    Var h = tape.gelu(tape.linear(input, tape.param(w1), tape.param(b1)));
    return tape.linear(h, tape.param(w2), tape.param(b2));
}

// FFN1(h_CLS (+) D_n); the learnable placeholder vector substitutes D_n
// when no history token was masked.
inline Var predict_history_repr(Tape& tape, ModelParams& p, const Var& h_cls,
                                int item_pos) {
    Var second = (item_pos == kPlaceholderItem)
                     ? tape.param(p.placeholder)
                     : tape.gather_rows(tape.param(p.item_emb), {item_pos});
    Var input = tape.hconcat({h_cls, second});
    return apply_predictor(tape, input, p.ffn1_w1, p.ffn1_b1, p.ffn1_w2,
                           p.ffn1_b2);
}

// FFN2(h_CLS (+) h_{n+1,M}).
inline Var predict_next_repr(Tape& tape, ModelParams& p, const Var& h_cls,
                             const Var& h_next_masked) {
    Var input = tape.hconcat({h_cls, h_next_masked});
    return apply_predictor(tape, input, p.ffn2_w1, p.ffn2_b1, p.ffn2_w2,
                           p.ffn2_b2);
}

// ||h_n - h^_n||^2 + ||h_{n+1} - h^_{n+1}||^2; the first term is omitted
// in the placeholder case. Targets enter as detached constants.
inline Var mapping_loss(Tape& tape, const std::optional<Var>& pred_history,
                        const Mat& target_history, const Var& pred_next,
                        const Mat& target_next) {
    Var loss = tape.squared_diff_sum(pred_next, tape.constant(target_next));
    if (pred_history)
        loss = tape.add(loss, tape.squared_diff_sum(
                                  *pred_history,
                                  tape.constant(target_history)));
    return loss;
}

// Mean cross entropy over labeled positions; logits come from the tied
// MLM head (hidden x A^T + bias). Zero when nothing is labeled.
inline Var mlm_loss(Tape& tape, ModelParams& p, const Var& hidden,
                    const std::vector<int>& labels) {
    std::vector<int> positions;
    std::vector<int> targets;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != kIgnoreLabel) {
            positions.push_back(static_cast<int>(i));
            targets.push_back(labels[i]);
        }
    if (positions.empty()) return tape.zero_scalar();
    Var rows = tape.gather_rows(hidden, positions);
    Var logits = tape.add_row_broadcast(
        tape.matmul_nt(rows, tape.param(p.tok_emb)), tape.param(p.mlm_bias));
    return tape.cross_entropy_mean(logits, targets);
}

// In-batch contrastive loss: logits[r][c] = cos(h_CLS[r], target[c]) / tau,
// true class on the diagonal; duplicate positives are kept as negatives.
inline Var seq_item_contrastive_loss(Tape& tape, const Var& h_cls_batch,
                                     const Var& targets, double tau) {
    if (tau <= 0.0) throw NumericError("contrastive loss: tau must be > 0");
    Var logits =
        tape.scale(tape.cosine_matrix(h_cls_batch, targets), 1.0 / tau);
    std::vector<int> labels(static_cast<std::size_t>(logits->val.rows()));
    for (std::size_t r = 0; r < labels.size(); ++r)
        labels[r] = static_cast<int>(r);
    return tape.cross_entropy_mean(logits, std::move(labels));
}

// L_PT = L_S-I + lambda1 * L_MLM + lambda2 * L_map.
inline Var pretrain_loss(Tape& tape, const Var& contrastive, const Var& mlm,
                         const Var& mapping, double lambda1, double lambda2) {
    Var loss = contrastive;
    loss = tape.add(loss, tape.scale(mlm, lambda1));
    loss = tape.add(loss, tape.scale(mapping, lambda2));
    return loss;
}

// Full-softmax finetuning loss over the catalog, cosine / tau logits.
inline Var finetune_loss(Tape& tape, const Var& h_cls, const Var& item_matrix,
                         int gt_index, double tau) {
    if (tau <= 0.0) throw NumericError("finetune loss: tau must be > 0");
    if (gt_index < 0 || gt_index >= item_matrix->val.rows())
        throw NumericError("finetune loss: ground-truth index out of range");
    Var logits =
        tape.scale(tape.cosine_matrix(h_cls, item_matrix), 1.0 / tau);
    return tape.cross_entropy_mean(logits, {gt_index});
}

// Trainer variant: the positive term runs live through the context
// encoder while the denominator reads the stale per-epoch item matrix.
inline Var finetune_loss_live_positive(Tape& tape, const Var& h_cls,
                                       const Var& live_positive,
                                       const Mat& stale_item_matrix,
                                       double tau) {
    Var pos =
        tape.scale(tape.cosine_matrix(h_cls, live_positive), 1.0 / tau);
    Var denom_logits = tape.scale(
        tape.cosine_matrix(h_cls, tape.constant(stale_item_matrix)),
        1.0 / tau);
    return tape.add(tape.scale(pos, -1.0),
                    tape.logsumexp_row(denom_logits));
}

// -ln sigmoid(pos - neg) = softplus(neg - pos).
inline Var bpr_loss(Tape& tape, const Var& pos_score, const Var& neg_score) {
    return tape.softplus(tape.sub(neg_score, pos_score));
}

} // namespace jepa4rec
