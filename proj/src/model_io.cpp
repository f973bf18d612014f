#include "counts/error.hpp"
#include "counts/model.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace counts {

namespace {

static_assert(std::endian::native == std::endian::little, "model files are written little-endian");

constexpr std::array<char, 8> kMagic{'C', 'N', 'T', 'S', 'M', 'D', 'L', '\0'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_matrix(std::ostream& out, const Matrix& m) {
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    void bytes(char* dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("model file is truncated");
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        bytes(reinterpret_cast<char*>(&v), sizeof v);
        return v;
    }
    std::string string() {
        const std::uint32_t n = u32();
        if (n > (1u << 24)) throw FormatError("model file string is implausibly long");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    Matrix matrix() {
        const std::uint32_t rows = u32();
        const std::uint32_t cols = u32();
        if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28)) throw FormatError("model tensor is implausibly large");
        Matrix m(rows, cols);
        bytes(reinterpret_cast<char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
        return m;
    }

private:
    std::istream& in_;
};

}  // namespace

void save_model(const ModelParams& params, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFileError(path.string(), "cannot write model file " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, kModelVersion);
    put_string(out, to_json(params.arch()).dump());
    put_matrix(out, params.input_offset());
    put_matrix(out, Matrix::Constant(1, 1, params.input_scale()));
    put_u32(out, static_cast<std::uint32_t>(params.tensors().size()));
    for (const auto& t : params.tensors()) {
        put_string(out, t.name);
        put_matrix(out, t.value);
    }
    if (!out) throw FormatError("failed writing model file " + path.string());
}

ModelParams load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError(path.string(), "missing model file " + path.string());
    Reader r(in);
    std::array<char, 8> magic{};
    r.bytes(magic.data(), magic.size());
    if (magic != kMagic) throw FormatError(path.string() + " is not a model file");
    const std::uint32_t version = r.u32();
    if (version != kModelVersion) throw VersionError("unsupported model version " + std::to_string(version));

    ArchConfig arch;
    try {
        arch = arch_from_json(nlohmann::json::parse(r.string()));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model architecture: ") + e.what());
    }
    // Rebuild the layout, then overwrite every tensor from the file.
    ModelParams params(arch, 0);
    params.set_input_offset(r.matrix());
    const Matrix scale = r.matrix();
    if (scale.size() != 1) throw FormatError("model input scale must be a single value");
    params.set_input_scale(scale(0, 0));
    const std::uint32_t count = r.u32();
    if (count != params.tensors_.size()) throw FormatError("model tensor count does not match its architecture");
    for (auto& t : params.tensors_) {
        const std::string name = r.string();
        if (name != t.name) throw FormatError("expected tensor '" + t.name + "', found '" + name + "'");
        Matrix m = r.matrix();
        if (m.rows() != t.value.rows() || m.cols() != t.value.cols())
            throw FormatError("tensor '" + name + "' has the wrong shape");
        t.value = std::move(m);
    }
    char extra = 0;
    if (in.read(&extra, 1); in.gcount() != 0) throw FormatError("trailing bytes after model tensors");
    return params;
}

}  // namespace counts
