#include "mscnet/weights.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mscnet {

namespace {

constexpr char kMagic[5] = {'M', 'S', 'C', 'W', '1'};
constexpr uint64_t kMaxNameLen = 4096;
constexpr uint64_t kMaxRank = 8;

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
    os.write((const char*)b, 8);
}

void put_f32(std::ostream& os, float v) {
    static_assert(sizeof(float) == 4);
    char b[4];
    std::memcpy(b, &v, 4);
    os.write(b, 4);
}

class Reader {
public:
    Reader(std::istream& is, const std::string& path) : is_(is), path_(path) {}

    bool at_eof() {
        is_.peek();
        return is_.eof();
    }

    uint64_t u64(const char* what) {
        unsigned char b[8];
        read_exact((char*)b, 8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= (uint64_t)b[i] << (8 * i);
        return v;
    }

    std::string bytes(size_t n, const char* what) {
        std::string s(n, '\0');
        read_exact(s.data(), n, what);
        return s;
    }

    float f32(const char* what) {
        char b[4];
        read_exact(b, 4, what);
        float v;
        std::memcpy(&v, b, 4);
        return v;
    }

private:
    void read_exact(char* dst, size_t n, const char* what) {
        is_.read(dst, (std::streamsize)n);
        if ((size_t)is_.gcount() != n) {
            throw FormatError(path_ + ": truncated while reading " + std::string(what));
        }
    }

    std::istream& is_;
    std::string path_;
};

}  // namespace

void save_weights(const Module& root, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    root.visit_state("", [&](const std::string& name, const Tensor& t, bool) {
        put_u64(os, name.size());
        os.write(name.data(), (std::streamsize)name.size());
        put_u64(os, t.rank());
        for (size_t i = 0; i < t.rank(); ++i) put_u64(os, t.dim(i));
        for (size_t i = 0; i < t.numel(); ++i) put_f32(os, (float)t[i]);
    });
    os.flush();
    if (!os) throw IoError("write failed: " + path);
}

void load_weights(Module& root, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);

    char magic[sizeof(kMagic)];
    is.read(magic, sizeof(kMagic));
    if ((size_t)is.gcount() != sizeof(kMagic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError(path + ": not an MSCW1 weight file (bad magic)");
    }

    // Stage 1: parse everything into memory.
    struct Record {
        Shape shape;
        std::vector<float> values;
    };
    std::map<std::string, Record> records;
    Reader r(is, path);
    while (!r.at_eof()) {
        const uint64_t name_len = r.u64("name length");
        if (name_len == 0 || name_len > kMaxNameLen) {
            throw FormatError(path + ": implausible name length " + std::to_string(name_len));
        }
        const std::string name = r.bytes((size_t)name_len, "name");
        const uint64_t rank = r.u64("rank");
        if (rank == 0 || rank > kMaxRank) {
            throw FormatError(path + ": implausible rank " + std::to_string(rank) + " for \"" + name + "\"");
        }
        Record rec;
        uint64_t numel = 1;
        for (uint64_t i = 0; i < rank; ++i) {
            const uint64_t extent = r.u64("extent");
            if (extent == 0 || numel > (uint64_t)1 << 32 || extent > (uint64_t)1 << 32) {
                throw FormatError(path + ": implausible extents for \"" + name + "\"");
            }
            rec.shape.push_back((size_t)extent);
            numel *= extent;
        }
        rec.values.reserve((size_t)numel);
        for (uint64_t i = 0; i < numel; ++i) rec.values.push_back(r.f32("payload"));
        if (!records.emplace(name, std::move(rec)).second) {
            throw FormatError(path + ": duplicate entry \"" + name + "\"");
        }
    }

    // Stage 2: validate the complete set against the model.
    std::vector<StateEntry> state = collect_state(root);
    std::ostringstream offenders;
    size_t offense_count = 0;
    auto offend = [&](const std::string& msg) {
        if (offense_count++) offenders << "; ";
        offenders << msg;
    };
    for (const StateEntry& e : state) {
        auto it = records.find(e.name);
        if (it == records.end()) {
            offend("missing \"" + e.name + "\"");
        } else if (it->second.shape != e.tensor.shape()) {
            offend("shape mismatch for \"" + e.name + "\": file " + shape_str(it->second.shape) +
                   ", model " + shape_str(e.tensor.shape()));
        }
    }
    for (const auto& [name, rec] : records) {
        (void)rec;
        bool known = false;
        for (const StateEntry& e : state) {
            if (e.name == name) {
                known = true;
                break;
            }
        }
        if (!known) offend("unknown entry \"" + name + "\"");
    }
    if (offense_count) {
        throw InvalidArgument(path + ": state mismatch (" + std::to_string(offense_count) +
                              " offenders): " + offenders.str());
    }

    // Stage 3: nothing can fail past this point; copy in.
    for (StateEntry& e : state) {
        const Record& rec = records.at(e.name);
        Tensor t = e.tensor;
        for (size_t i = 0; i < t.numel(); ++i) t[i] = (real)rec.values[i];
    }
}

}  // namespace mscnet
