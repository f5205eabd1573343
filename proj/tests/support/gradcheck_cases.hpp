#pragma once

#include "support/gradcheck.hpp"

#include <string>

namespace corrshift::testing {

struct GradCase {
    std::string name;
    std::vector<Shape> shapes;
    ScalarFn fn;
};

/// sum(v * w) for a fixed pseudo-random w, so every output element matters.
inline Var probe(const Var& v) {
    CounterRng rng(99, v.value().size());
    Tensor w = random_tensor(v.shape(), rng);
    return sum(mul(v, v.tape().constant(std::move(w))));
}

inline std::vector<GradCase> primitive_grad_cases() {
    static const std::vector<int> labels{2, 0, 1, 2, 1};
    return {
        {"matmul", {{3, 4}, {4, 2}}, [](Tape&, const auto& v) { return probe(matmul(v[0], v[1])); }},
        {"add", {{3, 4}, {3, 4}}, [](Tape&, const auto& v) { return probe(v[0] + v[1]); }},
        {"sub", {{3, 4}, {3, 4}}, [](Tape&, const auto& v) { return probe(v[0] - v[1]); }},
        {"mul", {{3, 4}, {3, 4}}, [](Tape&, const auto& v) { return probe(v[0] * v[1]); }},
        {"scale", {{5}}, [](Tape&, const auto& v) { return probe(-2.5 * v[0]); }},
        {"add_row", {{3, 4}, {4}}, [](Tape&, const auto& v) { return probe(add_row(v[0], v[1])); }},
        {"sub_row", {{3, 4}, {4}}, [](Tape&, const auto& v) { return probe(sub_row(v[0], v[1])); }},
        {"relu", {{4, 3}}, [](Tape&, const auto& v) { return probe(relu(v[0])); }},
        {"square", {{4, 3}}, [](Tape&, const auto& v) { return probe(square(v[0])); }},
        {"sum", {{4, 3}}, [](Tape&, const auto& v) { return square(sum(v[0])); }},
        {"mean", {{4, 3}}, [](Tape&, const auto& v) { return square(mean(v[0])); }},
        {"sum_axis0", {{4, 3}}, [](Tape&, const auto& v) { return probe(sum(v[0], 0)); }},
        {"sum_axis1", {{2, 3, 4}}, [](Tape&, const auto& v) { return probe(sum(v[0], 1)); }},
        {"mean_axis0", {{4, 3}}, [](Tape&, const auto& v) { return probe(mean(v[0], 0)); }},
        {"sum_squares", {{4, 3}}, [](Tape&, const auto& v) { return sum_squares(v[0]); }},
        {"reshape", {{2, 6}}, [](Tape&, const auto& v) { return probe(reshape(v[0], {3, 4})); }},
        {"transpose", {{2, 5}}, [](Tape&, const auto& v) { return probe(transpose(v[0])); }},
        {"permute", {{2, 3, 2, 2}}, [](Tape&, const auto& v) { return probe(permute(v[0], {0, 2, 3, 1})); }},
        {"gather_rows", {{4, 3}}, [](Tape&, const auto& v) { return probe(gather_rows(v[0], {3, 0, 3, 1})); }},
        {"conv2d_pad1", {{2, 2, 5, 4}, {3, 2, 3, 3}},
         [](Tape&, const auto& v) { return probe(conv2d(v[0], v[1], 1)); }},
        {"conv2d_pad0", {{1, 3, 4, 4}, {2, 3, 3, 3}},
         [](Tape&, const auto& v) { return probe(conv2d(v[0], v[1], 0)); }},
        {"avg_pool2d", {{2, 3, 4, 6}}, [](Tape&, const auto& v) { return probe(avg_pool2d(v[0], 2)); }},
        {"softmax_cross_entropy", {{5, 3}},
         [](Tape&, const auto& v) { return softmax_cross_entropy(v[0], labels); }},
        {"squared_error", {{5, 2}},
         [](Tape&, const auto& v) {
             CounterRng rng(7, 7);
             return squared_error(v[0], random_tensor({5, 2}, rng));
         }},
        {"mlp_composite", {{6, 4}, {4, 5}, {5, 1}},
         [](Tape&, const auto& v) {
             const Var h = relu(matmul(v[0], v[1]));
             return mean(square(matmul(h, v[2]))) + sum_squares(v[1]);
         }},
    };
}

} // namespace corrshift::testing
