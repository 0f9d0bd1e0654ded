#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prag/mat.hpp"

namespace prag {

// A named trainable tensor with its gradient accumulator and Adam state.
struct Param {
    std::string name;
    Mat value;
    Mat grad;
    Mat adam_m;
    Mat adam_v;
    bool trainable = true;

    Param() = default;
    Param(std::string n, Mat v, bool train = true)
        : name(std::move(n)), value(std::move(v)),
          grad(value.rows, value.cols), adam_m(value.rows, value.cols),
          adam_v(value.rows, value.cols), trainable(train) {}
};

// One-shot reverse-mode tape over Mat values. Build the graph forward, call
// backward(loss) once; leaf gradients are accumulated into the bound Params.
// Ops are only what the retriever needs; each backward is checked against
// central finite differences by gradient_check.
class Tape {
public:
    using Id = size_t;

    Id constant(Mat v);
    Id leaf(Param& p);  // binds the param; backward scatters into p.grad

    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id add_rowvec(Id x, Id v);  // v is 1 x cols, broadcast over rows
    Id add_rowvec_masked(Id x, Id v, std::vector<uint8_t> row_mask);
    Id repeat_rows(Id v, size_t n);
    Id matmul(Id a, Id b);
    Id matmul_nt(Id a, Id b);  // a * b^T
    Id matmul_tn(Id a, Id b);  // a^T * b
    Id scale(Id a, double s);
    Id add_scalar(Id a, double c);
    Id relu(Id a);
    Id row_softmax(Id a);
    Id layernorm(Id x, Id gain, Id bias, double eps = 1e-5);
    Id slice_cols(Id a, size_t c0, size_t c1);
    Id concat_cols(const std::vector<Id>& parts);
    // n x 1 non-negative scores -> weights summing to 1; all-zero input falls
    // back to uniform weights (zero gradient through the scores there).
    Id normalize_sum(Id s);
    Id sq_diff_sum(Id a, const Mat& target);  // 1x1: sum((a - target)^2)
    Id dot_all(Id a, Id b);                   // 1x1: sum(a .* b)

    const Mat& val(Id id) const { return nodes_[id].val; }
    Mat& grad(Id id) { return nodes_[id].grad; }

    // Seeds d(loss)=1 (loss must be 1x1), runs the graph in reverse, then adds
    // each bound leaf's gradient into its Param::grad.
    void backward(Id loss);

private:
    struct Node {
        Mat val;
        Mat grad;
        std::function<void(Tape&)> back;  // empty for leaves/constants
        Param* param = nullptr;
    };

    Id push(Mat val, std::function<void(Tape&)> back, Param* param = nullptr);

    std::vector<Node> nodes_;
};

}  // namespace prag
