#include "reclm/checkpoint.hpp"

namespace reclm {
namespace ckpt {

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ParseError("checkpoint truncated while reading u64");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), std::streamsize(s.size()));
}

std::string read_string(std::istream& in) {
    std::string s(read_u64(in), '\0');
    in.read(s.data(), std::streamsize(s.size()));
    if (!in) throw ParseError("checkpoint truncated while reading string");
    return s;
}

void write_mat(std::ostream& out, const Mat& m) {
    write_u64(out, std::uint64_t(m.rows()));
    write_u64(out, std::uint64_t(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), std::streamsize(sizeof(double) * m.size()));
}

Mat read_mat(std::istream& in) {
    auto rows = Eigen::Index(read_u64(in));
    auto cols = Eigen::Index(read_u64(in));
    Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), std::streamsize(sizeof(double) * m.size()));
    if (!in) throw ParseError("checkpoint truncated while reading matrix");
    return m;
}

void write_vec(std::ostream& out, const Vec& v) { write_mat(out, Mat(v)); }
Vec read_vec(std::istream& in) { return Vec(read_mat(in)); }

std::ofstream open_writer(const std::string& path, const nlohmann::json& header) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    std::uint32_t ver = kVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    write_string(out, header.dump());
    return out;
}

std::ifstream open_reader(const std::string& path, nlohmann::json& header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    std::uint32_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (!in || std::string(magic, 4) != std::string(kMagic, 4))
        throw ParseError("not a checkpoint file: " + path);
    if (ver != kVersion) throw ParseError("unsupported checkpoint version in " + path);
    header = nlohmann::json::parse(read_string(in));
    return in;
}

}  // namespace ckpt

void write_mlp(std::ostream& out, const Mlp& mlp) {
    const auto& spec = mlp.spec();
    ckpt::write_u64(out, std::uint64_t(spec.in_dim));
    ckpt::write_u64(out, std::uint64_t(spec.out_dim));
    ckpt::write_u64(out, spec.hidden.size());
    for (int h : spec.hidden) ckpt::write_u64(out, std::uint64_t(h));
    ckpt::write_string(out, activation_to_string(spec.activation));
    ckpt::write_u64(out, mlp.weights_.size());
    for (std::size_t l = 0; l < mlp.weights_.size(); ++l) {
        ckpt::write_mat(out, mlp.weights_[l].w);
        ckpt::write_mat(out, mlp.biases_[l].w);
    }
}

Mlp read_mlp(std::istream& in) {
    Mlp mlp;
    mlp.spec_.in_dim = int(ckpt::read_u64(in));
    mlp.spec_.out_dim = int(ckpt::read_u64(in));
    auto nh = ckpt::read_u64(in);
    for (std::uint64_t i = 0; i < nh; ++i) mlp.spec_.hidden.push_back(int(ckpt::read_u64(in)));
    mlp.spec_.activation = activation_from_string(ckpt::read_string(in));
    auto nl = ckpt::read_u64(in);
    for (std::uint64_t l = 0; l < nl; ++l) {
        mlp.weights_.emplace_back(ckpt::read_mat(in));
        mlp.biases_.emplace_back(ckpt::read_mat(in));
    }
    return mlp;
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot hash missing file: " + path);
    std::uint64_t h = 14695981039346656037ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a(buf, std::size_t(in.gcount()), h);
        if (!in) break;
    }
    return h;
}

}  // namespace reclm
