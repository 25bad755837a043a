#include "sled/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

#include "sled/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "archive payloads are little-endian");

namespace sled {

namespace {

constexpr char kMagic[5] = {'S', 'L', 'E', 'D', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ArchiveError("archive truncated in entry table");
    return v;
}
std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ArchiveError("archive truncated in entry table");
    return v;
}

} // namespace

void save_archive(const std::string& path, const NamedTensors& entries) {
    std::set<std::string> names;
    for (const auto& [name, tensor] : entries) {
        if (name.empty()) throw ArchiveError("archive entry with empty name");
        if (!names.insert(name).second)
            throw ArchiveError("duplicate archive entry: " + name);
        (void)tensor;
    }

    std::uint64_t table_size = sizeof(kMagic) + sizeof(std::uint64_t);
    for (const auto& [name, tensor] : entries)
        table_size += 4 + name.size() + 4 + 8 * tensor.ndim() + 8;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArchiveError("cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, entries.size());
    std::uint64_t offset = table_size;
    for (const auto& [name, tensor] : entries) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(tensor.ndim()));
        for (std::size_t d : tensor.shape()) write_u64(out, d);
        write_u64(out, offset);
        offset += tensor.size() * sizeof(double);
    }
    for (const auto& [name, tensor] : entries)
        out.write(reinterpret_cast<const char*>(tensor.data()),
                  static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    if (!out) throw ArchiveError("write failed for " + path);
}

NamedTensors load_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);

    char magic[sizeof(kMagic)] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ArchiveError("bad archive magic in " + path);

    const std::uint64_t count = read_u64(in);
    struct RawEntry {
        std::string name;
        std::vector<std::size_t> shape;
        std::uint64_t offset;
        std::uint64_t bytes;
    };
    std::vector<RawEntry> raw;
    std::set<std::string> names;
    for (std::uint64_t i = 0; i < count; ++i) {
        RawEntry e;
        const std::uint32_t name_len = read_u32(in);
        e.name.resize(name_len);
        in.read(e.name.data(), name_len);
        if (!in) throw ArchiveError("archive truncated in entry name");
        if (!names.insert(e.name).second)
            throw ArchiveError("duplicate archive entry: " + e.name);
        const std::uint32_t rank = read_u32(in);
        std::uint64_t elems = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint64_t dim = read_u64(in);
            if (dim == 0) throw ArchiveError("zero dimension in entry " + e.name);
            elems *= dim;
            e.shape.push_back(static_cast<std::size_t>(dim));
        }
        e.offset = read_u64(in);
        e.bytes = elems * sizeof(double);
        if (e.offset + e.bytes > file_size)
            throw ArchiveError("truncated payload for entry " + e.name);
        raw.push_back(std::move(e));
    }
    for (std::size_t i = 1; i < raw.size(); ++i)
        if (raw[i].offset < raw[i - 1].offset + raw[i - 1].bytes)
            throw ArchiveError("overlapping payloads in " + path);

    NamedTensors out;
    for (const RawEntry& e : raw) {
        std::vector<double> data(e.bytes / sizeof(double));
        in.seekg(static_cast<std::streamoff>(e.offset));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(e.bytes));
        if (!in) throw ArchiveError("truncated payload for entry " + e.name);
        out.emplace_back(e.name, Tensor::from(e.shape, std::move(data)));
    }
    return out;
}

bool ArchiveIndex::contains(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return true;
    return false;
}

const Tensor& ArchiveIndex::get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw ArchiveError("archive entry not found: " + name);
}

} // namespace sled
