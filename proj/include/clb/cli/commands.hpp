#pragma once

#include <filesystem>
#include <string>

#include "clb/data/synthetic.hpp"

namespace clb {

/// Generates a synthetic dataset and writes it as <out>/{train,test}/<class>/*.png.
/// Regenerating with the same spec gives byte-identical files. Throws
/// DataError when the directory cannot be written.
void gen_data(const std::filesystem::path& out, const SyntheticSpec& spec);

/// Fixed-width table of the strategy catalogue: name, family, defaults.
std::string strategies_table();

}  // namespace clb
