#include "falcon/gradients.hpp"

#include <cmath>

#include "falcon/autodiff.hpp"
#include "falcon/errors.hpp"

namespace falcon {

namespace {

using autodiff::NodeId;
using autodiff::Tape;

NodeId attention(Tape& tape, NodeId x, NodeId wq, NodeId wk, NodeId wv, NodeId wo, std::size_t heads) {
    const std::size_t d = tape.value(x).cols();
    const std::size_t dk = d / heads;
    const NodeId q = tape.matmul(x, wq);
    const NodeId k = tape.matmul(x, wk);
    const NodeId v = tape.matmul(x, wv);
    std::vector<NodeId> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dk, c1 = c0 + dk;
        const NodeId scores =
            tape.scale(tape.matmul(tape.slice_cols(q, c0, c1), tape.transpose(tape.slice_cols(k, c0, c1))),
                       1.0 / std::sqrt(static_cast<double>(dk)));
        outs.push_back(tape.matmul(tape.softmax_rows(scores), tape.slice_cols(v, c0, c1)));
    }
    return tape.matmul(tape.concat_cols(outs), wo);
}

} // namespace

EncoderGradients encoder_loss_gradients(std::span<const Image> tiles, const EncoderWeights<double>& w,
                                        const EncoderConfig& cfg) {
    cfg.validate();
    check_weight_shapes(w, cfg);
    if (tiles.empty()) throw ConfigError("encoder_loss_gradients: no input tiles");

    Tape tape;
    std::vector<NodeId> leaves;
    for_each_param(w, [&](const std::string&, const TensorD& t) { leaves.push_back(tape.leaf(t)); });

    // Canonical order: 3 embedding tensors, 10 per layer, 6 per ReAtten layer.
    const NodeId patch_embed = leaves[0], pos_embed = leaves[1], registers = leaves[2];
    const auto layer_param = [&](std::size_t l, std::size_t i) { return leaves[3 + 10 * l + i]; };
    const auto reatten_param = [&](std::size_t l, std::size_t i) { return leaves[3 + 10 * cfg.layers + 6 * l + i]; };

    const std::size_t n = cfg.image_tokens(), m = cfg.registers;
    const double eps = cfg.ln_eps;

    std::vector<NodeId> hidden;
    for (const auto& tile : tiles) {
        const NodeId tokens = tape.leaf(patchify(normalize_pixels(tile), cfg.patch).cast<double>());
        const NodeId image = tape.add(tape.matmul(tokens, patch_embed), pos_embed);
        hidden.push_back(tape.concat_rows({image, registers}));
    }

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        for (auto& h : hidden) {
            const NodeId normed = tape.layer_norm(h, layer_param(l, 0), layer_param(l, 1), eps);
            h = tape.add(h, attention(tape, normed, layer_param(l, 2), layer_param(l, 3), layer_param(l, 4),
                                      layer_param(l, 5), cfg.heads));
        }
        if (cfg.reatten_enabled) {
            std::vector<NodeId> regs;
            for (auto h : hidden) regs.push_back(tape.slice_rows(h, n, n + m));
            const NodeId stacked = tape.concat_rows(regs);
            const NodeId normed = tape.layer_norm(stacked, reatten_param(l, 0), reatten_param(l, 1), eps);
            const NodeId updated =
                tape.add(stacked, attention(tape, normed, reatten_param(l, 2), reatten_param(l, 3),
                                            reatten_param(l, 4), reatten_param(l, 5), cfg.heads));
            for (std::size_t k = 0; k < hidden.size(); ++k) {
                hidden[k] = tape.concat_rows(
                    {tape.slice_rows(hidden[k], 0, n), tape.slice_rows(updated, k * m, (k + 1) * m)});
            }
        }
        for (auto& h : hidden) {
            const NodeId normed = tape.layer_norm(h, layer_param(l, 6), layer_param(l, 7), eps);
            h = tape.add(h, tape.matmul(tape.gelu(tape.matmul(normed, layer_param(l, 8))), layer_param(l, 9)));
        }
    }

    std::vector<NodeId> outputs;
    for (auto h : hidden) outputs.push_back(tape.slice_rows(h, n, n + m));
    const NodeId loss = tape.sum(tape.concat_rows(outputs));
    tape.backward(loss);

    EncoderGradients result;
    result.loss = tape.value(loss)[0];
    result.grads = zero_weights<double>(cfg);
    std::size_t i = 0;
    for_each_param(result.grads, [&](const std::string&, TensorD& g) { g = tape.grad(leaves[i++]); });
    return result;
}

} // namespace falcon
