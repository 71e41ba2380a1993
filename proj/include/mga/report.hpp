#pragma once

#include "mga/adapters.hpp"
#include "mga/cmga.hpp"
#include "mga/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace mga {

// ---- parameter counting ----------------------------------------------------

enum class Component { Smga, Cmga, AdapterModel };

Component component_from_string(const std::string& name);
std::string to_string(Component c);

struct ParamDims {
    std::size_t channels = 16; // D for smga / cmga
    std::size_t frames = 8;
    std::size_t ratio = 4;     // r1 for smga, r2 for cmga
    // adapter-model only
    BackboneConfig backbone;
    std::size_t adapter_ratio = 4;
    std::size_t r1 = 4;
    std::size_t r2 = 4;
};

struct ParamItem {
    std::string name;
    Shape shape;
    std::size_t count = 0;
};

struct ParamCount {
    std::vector<ParamItem> items;
    std::size_t total = 0;
    std::size_t trainable = 0; // equals total except for the adapter model
};

/// Learnable scalars per named tensor, taken from the same layouts the
/// modules register at construction.
ParamCount count_parameters(Component component, const ParamDims& dims);

// ---- frame-wise vs frame-all cost ------------------------------------------

struct BenchShape {
    std::size_t frames = 8;
    std::size_t height = 7;
    std::size_t width = 7;
    std::size_t channels = 64;
    std::size_t ratio = 4;
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
};

/// Per-query analytic cost of the cross-association stage.
struct BenchCost {
    std::size_t score_elements = 0; // entries of C
    std::size_t macs = 0;           // both logit products plus the attended read-out
    std::size_t peak_floats = 0;    // logits x2, their sum, softmax, motion, values, output
    double median_ms = 0.0;         // measured; 0 when not timed
};

BenchCost bench_analytic(const BenchShape& shape, CrossVariant variant);
/// Median wall time of cross association + query enhancement over `reps`
/// runs on random inputs (no gradient recording).
double bench_wall_ms(const BenchShape& shape, CrossVariant variant, std::size_t reps, std::uint64_t seed = 7);

// ---- attention export ------------------------------------------------------

/// Rows of a rank-2 tensor, one per line, comma separated, 17 significant digits.
void write_matrix_csv(const std::filesystem::path& path, const Tensor& m);
Tensor read_matrix_csv(const std::filesystem::path& path);

/// Binary 8-bit PGM. Values are min-max normalised per matrix to [0, 255];
/// a matrix whose entries are all equal maps to 0 everywhere.
void write_matrix_pgm(const std::filesystem::path& path, const Tensor& m);
std::vector<std::uint8_t> normalize_to_gray(const Tensor& m);

} // namespace mga
