#include "wpcl/network.hpp"

#include "wpcl/regions.hpp"

#include <cmath>

namespace wpcl {

namespace {

LinearLayer make_layer(std::size_t in, std::size_t out, Rng& rng, bool zero_init) {
    LinearLayer layer;
    layer.weight = make_tensor({in, out}, true);
    layer.bias = make_tensor({1, out}, true);
    if (!zero_init) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& v : layer.weight->data) v = rng.uniform(-bound, bound);
    }
    return layer;
}

BranchNetwork make_network(std::size_t input_dim, std::size_t class_count, Rng& rng,
                           std::size_t feature_dim, std::size_t projection_dim) {
    BranchNetwork net;
    net.input_dim = input_dim;
    net.feature_dim = feature_dim;
    net.class_count = class_count;
    net.projection_dim = projection_dim;
    net.backbone.push_back(make_layer(input_dim, 32, rng, false));
    net.backbone.push_back(make_layer(32, 32, rng, false));
    net.backbone.push_back(make_layer(32, feature_dim, rng, false));
    net.classifier = make_layer(feature_dim, class_count, rng, true);
    net.projection = make_layer(feature_dim, projection_dim, rng, false);
    return net;
}

} // namespace

std::vector<std::pair<std::string, Tensor>>
BranchNetwork::named_parameters(const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < backbone.size(); ++i) {
        out.emplace_back(prefix + ".backbone." + std::to_string(i) + ".weight",
                         backbone[i].weight);
        out.emplace_back(prefix + ".backbone." + std::to_string(i) + ".bias",
                         backbone[i].bias);
    }
    out.emplace_back(prefix + ".classifier.weight", classifier.weight);
    out.emplace_back(prefix + ".classifier.bias", classifier.bias);
    out.emplace_back(prefix + ".projection.weight", projection.weight);
    out.emplace_back(prefix + ".projection.bias", projection.bias);
    return out;
}

std::vector<Tensor> BranchNetwork::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters("")) out.push_back(t);
    return out;
}

void BranchNetwork::set_requires_grad(bool value) {
    for (Tensor& t : parameters()) {
        t->requires_grad = value;
        if (value)
            t->grad.assign(t->data.size(), 0.0);
        else
            t->grad.clear();
    }
}

BranchNetwork make_point_network(std::size_t class_count, Rng& rng,
                                 std::size_t feature_dim, std::size_t projection_dim) {
    return make_network(12, class_count, rng, feature_dim, projection_dim);
}

BranchNetwork make_image_network(std::size_t class_count, Rng& rng,
                                 std::size_t feature_dim, std::size_t projection_dim) {
    return make_network(8, class_count, rng, feature_dim, projection_dim);
}

BranchOutput forward_branch(Tape& tape, const BranchNetwork& net, const Tensor& input) {
    if (input->rows() == 0) throw TensorError("forward_branch: empty input");
    if (input->cols() != net.input_dim) throw TensorError("forward_branch: input dim mismatch");
    Tensor h = input;
    for (std::size_t i = 0; i < net.backbone.size(); ++i) {
        h = tape.add_row(tape.matmul(h, net.backbone[i].weight), net.backbone[i].bias);
        if (i + 1 < net.backbone.size()) h = tape.relu(h);
    }
    BranchOutput out;
    out.features = h;
    out.logits = tape.add_row(tape.matmul(h, net.classifier.weight), net.classifier.bias);
    out.probs = tape.softmax_rows(out.logits);
    return out;
}

Tensor point_input_features(const std::vector<Vec3>& points,
                            const std::vector<Vec3>& colors,
                            std::size_t context_knn) {
    const std::size_t n = points.size();
    Tensor out = make_tensor({n, 12});
    if (n == 0) return out;
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : points) centroid += p;
    centroid /= static_cast<double>(n);

    std::vector<std::vector<std::size_t>> neighbors;
    if (n > context_knn) neighbors = knn_neighbors(points, context_knn);

    for (std::size_t i = 0; i < n; ++i) {
        double* row = out->data.data() + i * 12;
        row[0] = points[i].x() - centroid.x();
        row[1] = points[i].y() - centroid.y();
        row[2] = points[i].z();
        row[3] = colors[i].x();
        row[4] = colors[i].y();
        row[5] = colors[i].z();
        Vec3 off = Vec3::Zero(), crgb = colors[i];
        if (!neighbors.empty() && !neighbors[i].empty()) {
            crgb = Vec3::Zero();
            for (std::size_t j : neighbors[i]) {
                off += points[j] - points[i];
                crgb += colors[j];
            }
            off /= static_cast<double>(neighbors[i].size());
            crgb /= static_cast<double>(neighbors[i].size());
        }
        row[6] = off.x();
        row[7] = off.y();
        row[8] = off.z();
        row[9] = crgb.x();
        row[10] = crgb.y();
        row[11] = crgb.z();
    }
    return out;
}

Tensor pixel_input_features(const CameraView& view) {
    const std::size_t hh = view.height, ww = view.width;
    Tensor out = make_tensor({hh * ww, 8});
    auto color_at = [&](int h, int w, int c) -> double {
        if (view.color.empty()) return 0.0;
        return view.color[(static_cast<std::size_t>(h) * ww + w) * 3 + c];
    };
    for (std::size_t h = 0; h < hh; ++h)
        for (std::size_t w = 0; w < ww; ++w) {
            double* row = out->data.data() + (h * ww + w) * 8;
            row[0] = color_at(h, w, 0);
            row[1] = color_at(h, w, 1);
            row[2] = color_at(h, w, 2);
            row[3] = hh > 1 ? static_cast<double>(h) / (hh - 1) : 0.0;
            row[4] = ww > 1 ? static_cast<double>(w) / (ww - 1) : 0.0;
            // 3x3 box blur, clamped at the borders.
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                int cnt = 0;
                for (int dh = -1; dh <= 1; ++dh)
                    for (int dw = -1; dw <= 1; ++dw) {
                        const int nh = static_cast<int>(h) + dh;
                        const int nw = static_cast<int>(w) + dw;
                        if (nh < 0 || nh >= static_cast<int>(hh) || nw < 0 ||
                            nw >= static_cast<int>(ww))
                            continue;
                        acc += color_at(nh, nw, c);
                        ++cnt;
                    }
                row[5 + c] = acc / cnt;
            }
        }
    return out;
}

} // namespace wpcl
