#pragma once

#include "eos/criterion.hpp"

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace eos::cli {

// Deliberate defects for exercising the suite itself.
enum class Fault {
    none,
    g_operator,  // adds a small symmetric perturbation to every G·v
    delta_norm,  // inflates E‖Δ^L‖² before the chain is multiplied out
};

Fault parse_fault(const std::string& name);

struct VerifyOptions {
    std::uint64_t seed = 1;
    std::size_t samples = 16;
    std::vector<std::size_t> widths{6, 8, 8, 3};
    criterion::Tag criterion = criterion::Tag::cross_entropy;
    Fault fault = Fault::none;
};

struct VerifyCheck {
    std::string name;
    double residual = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Every identity and oracle check at a random parameter point of a fresh tiny model.
std::vector<VerifyCheck> run_verify_suite(const VerifyOptions& opts);

void print_verify_table(const std::vector<VerifyCheck>& checks, std::ostream& out);

}  // namespace eos::cli
