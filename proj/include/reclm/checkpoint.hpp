#pragma once

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reclm/core.hpp"
#include "reclm/mlp.hpp"

namespace reclm {

// Versioned binary checkpoint: magic, format version, JSON spec header, raw payload.
// Doubles are written verbatim so round-trips are bit-exact.

namespace ckpt {

constexpr char kMagic[4] = {'R', 'L', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v);
std::uint64_t read_u64(std::istream& in);
void write_string(std::ostream& out, const std::string& s);
std::string read_string(std::istream& in);
void write_mat(std::ostream& out, const Mat& m);
Mat read_mat(std::istream& in);
void write_vec(std::ostream& out, const Vec& v);
Vec read_vec(std::istream& in);

// opens the file and validates magic/version; header describes what follows
std::ofstream open_writer(const std::string& path, const nlohmann::json& header);
std::ifstream open_reader(const std::string& path, nlohmann::json& header);

}  // namespace ckpt

void write_mlp(std::ostream& out, const Mlp& mlp);
Mlp read_mlp(std::istream& in);

std::uint64_t hash_file(const std::string& path);

}  // namespace reclm
