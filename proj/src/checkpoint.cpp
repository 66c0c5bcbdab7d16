#include "crfgan/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "crfgan/volume.hpp"

namespace crfgan {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'F', 'G', 'A', 'N', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IntegrityError("checkpoint: truncated file");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const auto n = read_pod<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw IntegrityError("checkpoint: truncated string");
    return s;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t.value;
    return nullptr;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    const std::string tmp = path + ".tmp";
    std::ostringstream manifest;
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw FormatError("checkpoint: cannot open " + tmp);
        os.write(kMagic, 8);
        write_pod<std::uint64_t>(os, c.graph_fingerprint);
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.meta.size()));
        for (const auto& [k, v] : c.meta) {
            write_string(os, k);
            write_string(os, v);
        }
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.tensors.size()));
        manifest << "fingerprint " << std::hex << c.graph_fingerprint << std::dec << "\n";
        for (const auto& t : c.tensors) {
            const auto offset = os.tellp();
            write_string(os, t.name);
            write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.shape.size()));
            for (int d : t.value.shape) write_pod<std::int64_t>(os, d);
            write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(t.value.size() * 8));
            os.write(reinterpret_cast<const char*>(t.value.v.data()),
                     static_cast<std::streamsize>(t.value.size() * 8));
            manifest << t.name;
            for (std::size_t i = 0; i < t.value.shape.size(); ++i)
                manifest << (i == 0 ? " " : "x") << t.value.shape[i];
            manifest << " @" << offset << "\n";
        }
        if (!os) throw FormatError("checkpoint: write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw FormatError("checkpoint: rename failed for " + path);
    std::ofstream m(path + ".manifest.txt");
    m << manifest.str();
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kMagic, 8))
        throw FormatError("checkpoint: bad magic in " + path);
    Checkpoint c;
    c.graph_fingerprint = read_pod<std::uint64_t>(is);
    const auto n_meta = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = read_string(is);
        c.meta[k] = read_string(is);
    }
    const auto n_tensors = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        NamedTensor t;
        t.name = read_string(is);
        const auto ndim = read_pod<std::uint32_t>(is);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(read_pod<std::int64_t>(is));
        const auto bytes = read_pod<std::uint64_t>(is);
        if (bytes != static_cast<std::uint64_t>(Tensor::numel(shape)) * 8)
            throw IntegrityError("checkpoint: tensor byte length mismatch for " + t.name);
        t.value = Tensor(shape);
        is.read(reinterpret_cast<char*>(t.value.v.data()),
                static_cast<std::streamsize>(bytes));
        if (!is) throw IntegrityError("checkpoint: truncated tensor " + t.name);
        c.tensors.push_back(std::move(t));
    }
    return c;
}

}  // namespace crfgan
