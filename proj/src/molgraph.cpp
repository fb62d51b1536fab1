#include "pace/molgraph.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "pace/error.hpp"

namespace pace {

namespace {

constexpr std::array<std::string_view, 119> kSymbols = {
    "",   "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",  "S",
    "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho",
    "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po",
    "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md",
    "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

constexpr std::array<double, 55> kMasses = {
    0,       1.008,   4.0026,  6.94,    9.0122,  10.81,   12.011,  14.007,  15.999,  18.998,  20.180,
    22.990,  24.305,  26.982,  28.085,  30.974,  32.06,   35.45,   39.948,  39.098,  40.078,  44.956,
    47.867,  50.942,  51.996,  54.938,  55.845,  58.933,  58.693,  63.546,  65.38,   69.723,  72.630,
    74.922,  78.971,  79.904,  83.798,  85.468,  87.62,   88.906,  91.224,  92.906,  95.95,   98.0,
    101.07,  102.91,  106.42,  107.87,  112.41,  114.82,  118.71,  121.76,  127.60,  126.90,  131.29};

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

bool to_double(std::string_view s, double& out) {
    auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

/// key=value pairs; values may be double-quoted.
std::map<std::string, std::string> parse_comment(std::string_view s) {
    std::map<std::string, std::string> kv;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t eq = s.find('=', i);
        if (eq == std::string_view::npos) break;
        std::string key(trim(s.substr(i, eq - i)));
        std::size_t v = eq + 1;
        std::string value;
        if (v < s.size() && s[v] == '"') {
            std::size_t close = s.find('"', v + 1);
            if (close == std::string_view::npos) close = s.size();
            value = std::string(s.substr(v + 1, close - v - 1));
            i = close + 1;
        } else {
            std::size_t end = v;
            while (end < s.size() && s[end] != ' ' && s[end] != '\t') ++end;
            value = std::string(s.substr(v, end - v));
            i = end;
        }
        if (key.find(' ') != std::string::npos) key = key.substr(key.rfind(' ') + 1);
        kv[key] = value;
    }
    return kv;
}

std::string fmt(double x) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

}  // namespace

int atomic_number(std::string_view symbol) {
    for (std::size_t z = 1; z < kSymbols.size(); ++z)
        if (kSymbols[z] == symbol) return static_cast<int>(z);
    return 0;
}

std::string element_symbol(int z) {
    if (z < 1 || z >= static_cast<int>(kSymbols.size())) throw DataError("no element with Z=" + std::to_string(z));
    return std::string(kSymbols[static_cast<std::size_t>(z)]);
}

double atomic_mass(int z) {
    if (z < 1 || z >= static_cast<int>(kMasses.size()))
        throw DataError("no tabulated mass for Z=" + std::to_string(z));
    return kMasses[static_cast<std::size_t>(z)];
}

std::vector<Structure> parse_extended_xyz(std::string_view text, const std::string& energy_key) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            if (pos < text.size()) lines.push_back(text.substr(pos));
            break;
        }
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    std::vector<Structure> frames;
    std::size_t li = 0;
    while (li < lines.size()) {
        if (trim(lines[li]).empty()) {
            ++li;
            continue;
        }
        const int frame_no = static_cast<int>(frames.size()) + 1;
        const int count_line = static_cast<int>(li) + 1;
        std::string_view cnt = trim(lines[li]);
        long n = 0;
        auto r = std::from_chars(cnt.data(), cnt.data() + cnt.size(), n);
        if (r.ec != std::errc{} || r.ptr != cnt.data() + cnt.size() || n < 1)
            throw ParseError(count_line, "frame " + std::to_string(frame_no) + ": bad atom count '" + std::string(cnt) + "'");
        if (li + 1 >= lines.size())
            throw ParseError(count_line, "frame " + std::to_string(frame_no) + ": missing comment line");
        auto kv = parse_comment(lines[li + 1]);
        Structure s;
        if (auto it = kv.find(energy_key); it != kv.end()) {
            double e;
            if (!to_double(it->second, e))
                throw ParseError(static_cast<int>(li) + 2, "frame " + std::to_string(frame_no) + ": bad energy value");
            s.energy = e;
        }
        li += 2;
        std::vector<Vec3> forces;
        bool with_forces = false;
        for (long a = 0; a < n; ++a, ++li) {
            const int line_no = static_cast<int>(li) + 1;
            if (li >= lines.size() || trim(lines[li]).empty() ||
                (split_ws(lines[li]).size() == 1 && a > 0)) {
                throw ParseError(line_no, "frame " + std::to_string(frame_no) + ": expected " + std::to_string(n) +
                                              " atom lines, found " + std::to_string(a));
            }
            auto tok = split_ws(lines[li]);
            if (tok.size() != 4 && tok.size() != 7)
                throw ParseError(line_no, "frame " + std::to_string(frame_no) + ": atom line needs 4 or 7 columns");
            int z = atomic_number(tok[0]);
            if (z == 0) throw ParseError(line_no, "unknown element symbol '" + std::string(tok[0]) + "'");
            Vec3 p;
            for (int k = 0; k < 3; ++k)
                if (!to_double(tok[static_cast<std::size_t>(k + 1)], p[static_cast<std::size_t>(k)]))
                    throw ParseError(line_no, "unparseable coordinate '" + std::string(tok[static_cast<std::size_t>(k + 1)]) + "'");
            const bool has_f = tok.size() == 7;
            if (a == 0) with_forces = has_f;
            if (has_f != with_forces)
                throw ParseError(line_no, "frame " + std::to_string(frame_no) + ": inconsistent force columns");
            if (has_f) {
                Vec3 f;
                for (int k = 0; k < 3; ++k)
                    if (!to_double(tok[static_cast<std::size_t>(k + 4)], f[static_cast<std::size_t>(k)]))
                        throw ParseError(line_no, "unparseable force '" + std::string(tok[static_cast<std::size_t>(k + 4)]) + "'");
                forces.push_back(f);
            }
            s.species.push_back(z);
            s.positions.push_back(p);
        }
        if (with_forces) s.forces = std::move(forces);
        frames.push_back(std::move(s));
    }
    return frames;
}

std::vector<Structure> read_extended_xyz(const std::filesystem::path& path, const std::string& energy_key) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_extended_xyz(ss.str(), energy_key);
}

std::string serialize_extended_xyz(std::span<const Structure> frames, const std::string& energy_key) {
    std::string out;
    for (const Structure& s : frames) {
        out += std::to_string(s.size()) + "\n";
        std::string comment = "Properties=species:S:1:pos:R:3";
        if (s.forces) comment += ":forces:R:3";
        if (s.energy) comment = energy_key + "=" + fmt(*s.energy) + " " + comment;
        out += comment + "\n";
        for (std::size_t i = 0; i < s.size(); ++i) {
            out += element_symbol(s.species[i]);
            for (double x : s.positions[i]) out += " " + fmt(x);
            if (s.forces)
                for (double x : (*s.forces)[i]) out += " " + fmt(x);
            out += "\n";
        }
    }
    return out;
}

void write_extended_xyz(const std::filesystem::path& path, std::span<const Structure> frames,
                        const std::string& energy_key) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << serialize_extended_xyz(frames, energy_key);
}

void convert_units(Structure& s) {
    if (s.energy) *s.energy = convert_units(*s.energy);
    if (s.forces)
        for (Vec3& f : *s.forces)
            for (double& x : f) x = convert_units(x);
}

std::vector<double> MolecularGraph::one_hot() const {
    std::vector<double> out(species.size() * static_cast<std::size_t>(n_species), 0.0);
    for (std::size_t i = 0; i < species.size(); ++i)
        out[i * static_cast<std::size_t>(n_species) + static_cast<std::size_t>(species[i])] = 1.0;
    return out;
}

std::vector<int> MolecularGraph::neighbor_counts() const {
    std::vector<int> n(species.size(), 0);
    for (const Edge& e : edges) ++n[static_cast<std::size_t>(e.center)];
    return n;
}

std::vector<int> species_indices(const Structure& s, std::span<const int> alphabet) {
    std::vector<int> idx;
    for (int z : s.species) {
        auto it = std::find(alphabet.begin(), alphabet.end(), z);
        if (it == alphabet.end())
            throw DataError("species " + (z >= 1 && z <= 118 ? element_symbol(z) : std::to_string(z)) +
                            " is not in the model alphabet");
        idx.push_back(static_cast<int>(it - alphabet.begin()));
    }
    return idx;
}

std::vector<int> species_alphabet(std::span<const Structure> structures) {
    std::vector<int> a;
    for (const Structure& s : structures) a.insert(a.end(), s.species.begin(), s.species.end());
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    return a;
}

MolecularGraph build_graph(const Structure& s, double cutoff, std::span<const int> alphabet) {
    if (!(cutoff > 0)) throw ConfigError("cutoff must be positive");
    if (s.size() == 0) throw DataError("structure has no atoms");
    if (s.positions.size() != s.size()) throw DataError("position count does not match species count");
    MolecularGraph g;
    g.atomic_numbers = s.species;
    g.species = species_indices(s, alphabet);
    g.n_species = static_cast<int>(alphabet.size());
    g.node_molecule.assign(s.size(), 0);
    g.molecule_offsets = {0, s.size()};
    const int n = static_cast<int>(s.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const Vec3 &a = s.positions[static_cast<std::size_t>(i)], &b = s.positions[static_cast<std::size_t>(j)];
            Vec3 d{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
            double r = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            if (r == 0.0) throw DataError("atoms " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
            if (r > cutoff) continue;
            g.edges.push_back({i, j, {d[0] / r, d[1] / r, d[2] / r}, r});
        }
    g.edge_offsets = {0, g.edges.size()};
    return g;
}

MolecularGraph build_graph(const Structure& s, double cutoff) {
    auto alphabet = species_alphabet(std::span<const Structure>(&s, 1));
    return build_graph(s, cutoff, alphabet);
}

MolecularGraph batch(std::span<const MolecularGraph> graphs) {
    MolecularGraph out;
    out.molecule_offsets = {0};
    out.edge_offsets = {0};
    int mol = 0;
    for (const MolecularGraph& g : graphs) {
        if (out.n_species == 0) out.n_species = g.n_species;
        if (g.n_species != out.n_species) throw InputError("batched graphs use different species alphabets");
        const int shift = static_cast<int>(out.species.size());
        out.atomic_numbers.insert(out.atomic_numbers.end(), g.atomic_numbers.begin(), g.atomic_numbers.end());
        out.species.insert(out.species.end(), g.species.begin(), g.species.end());
        for (int m : g.node_molecule) out.node_molecule.push_back(m + mol);
        for (std::size_t k = 1; k < g.molecule_offsets.size(); ++k) {
            out.molecule_offsets.push_back(g.molecule_offsets[k] + static_cast<std::size_t>(shift));
            out.edge_offsets.push_back(g.edge_offsets[k] + out.edges.size());
        }
        for (Edge e : g.edges) {
            e.center += shift;
            e.neighbor += shift;
            out.edges.push_back(e);
        }
        mol += static_cast<int>(g.n_molecules());
    }
    return out;
}

DatasetStats compute_stats(std::span<const Structure> training, std::span<const MolecularGraph> graphs) {
    if (training.empty()) throw ConfigError("statistics need a nonempty training set");
    DatasetStats st;
    double esum = 0, nsum = 0;
    std::vector<double> comps;
    for (const Structure& s : training) {
        if (!s.energy || !s.forces) throw DataError("training structures need energies and forces");
        esum += *s.energy;
        nsum += static_cast<double>(s.size());
        for (const Vec3& f : *s.forces) comps.insert(comps.end(), f.begin(), f.end());
    }
    st.mean_energy = esum / static_cast<double>(training.size());
    st.energy_per_atom = esum / nsum;
    double mean = 0;
    for (double c : comps) mean += c;
    mean /= static_cast<double>(comps.size());
    double var = 0;
    for (double c : comps) var += (c - mean) * (c - mean);
    st.force_std = std::sqrt(var / static_cast<double>(comps.size()));
    double edges = 0, nodes = 0;
    for (const MolecularGraph& g : graphs) {
        edges += static_cast<double>(g.edges.size());
        nodes += static_cast<double>(g.n_nodes());
    }
    st.avg_neighbors = nodes > 0 ? edges / nodes : 0.0;
    return st;
}

// ---- binary cache ------------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {
constexpr char kDataMagic[8] = {'P', 'A', 'C', 'E', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kDataVersion = 1;

template <class V>
void put(std::ostream& o, const V& v) {
    o.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class V>
V get(std::istream& in) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw FormatError("dataset cache is truncated");
    return v;
}
}  // namespace

void save_dataset_cache(const std::filesystem::path& path, std::span<const Structure> frames) {
    std::ofstream o(path, std::ios::binary);
    if (!o) throw InputError("cannot write " + path.string());
    o.write(kDataMagic, sizeof kDataMagic);
    put(o, kDataVersion);
    put(o, static_cast<std::uint64_t>(frames.size()));
    for (const Structure& s : frames) {
        put(o, static_cast<std::uint32_t>(s.size()));
        for (int z : s.species) put(o, static_cast<std::int32_t>(z));
        for (const Vec3& p : s.positions)
            for (double x : p) put(o, x);
        put(o, static_cast<std::uint8_t>(s.energy.has_value()));
        put(o, s.energy.value_or(0.0));
        put(o, static_cast<std::uint8_t>(s.forces.has_value()));
        if (s.forces)
            for (const Vec3& f : *s.forces)
                for (double x : f) put(o, x);
    }
}

std::vector<Structure> load_dataset_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kDataMagic, sizeof magic) != 0) throw FormatError("not a dataset cache (bad magic)");
    auto version = get<std::uint32_t>(in);
    if (version != kDataVersion)
        throw FormatError("unsupported dataset cache version " + std::to_string(version));
    auto n = get<std::uint64_t>(in);
    std::vector<Structure> frames;
    for (std::uint64_t k = 0; k < n; ++k) {
        Structure s;
        auto na = get<std::uint32_t>(in);
        for (std::uint32_t i = 0; i < na; ++i) s.species.push_back(get<std::int32_t>(in));
        for (std::uint32_t i = 0; i < na; ++i) {
            Vec3 p;
            for (double& x : p) x = get<double>(in);
            s.positions.push_back(p);
        }
        bool has_e = get<std::uint8_t>(in) != 0;
        double e = get<double>(in);
        if (has_e) s.energy = e;
        if (get<std::uint8_t>(in) != 0) {
            std::vector<Vec3> f(na);
            for (Vec3& v : f)
                for (double& x : v) x = get<double>(in);
            s.forces = std::move(f);
        }
        frames.push_back(std::move(s));
    }
    return frames;
}

}  // namespace pace
