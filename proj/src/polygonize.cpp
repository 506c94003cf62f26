#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <unordered_map>

#include "dumpwatch/detect.hpp"

namespace dumpwatch {

namespace {

// Grid vertices are pixel corners: x = column, y = row, y pointing south.
struct Vertex {
    int x, y;
    bool operator==(const Vertex&) const = default;
};

struct Edge {
    Vertex from, to;
};

using GridRing = std::vector<Vertex>;  // closed: front() == back()

Vertex direction(const Edge& e) { return {e.to.x - e.from.x, e.to.y - e.from.y}; }

// Turning left on the map (north up) with y pointing south.
Vertex left_of(Vertex d) { return {d.y, -d.x}; }
Vertex right_of(Vertex d) { return {-d.y, d.x}; }

std::int64_t key(Vertex v, int stride) { return static_cast<std::int64_t>(v.y) * stride + v.x; }

// Twice the shoelace area in grid coordinates; negative for rings that run
// counter-clockwise on the map.
long long twice_area(const GridRing& ring) {
    long long acc = 0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        acc += static_cast<long long>(ring[i].x) * ring[i + 1].y - static_cast<long long>(ring[i + 1].x) * ring[i].y;
    }
    return acc;
}

bool contains(const GridRing& ring, double px, double py) {
    bool inside = false;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const Vertex a = ring[i], b = ring[i + 1];
        if ((a.y > py) != (b.y > py)) {
            const double x = a.x + (py - a.y) * (b.x - a.x) / static_cast<double>(b.y - a.y);
            if (x > px) inside = !inside;
        }
    }
    return inside;
}

// Drops vertices in the middle of straight runs and starts the ring at its
// north-west-most vertex.
GridRing simplify(const GridRing& closed) {
    GridRing open(closed.begin(), closed.end() - 1);
    const std::size_t n = open.size();
    GridRing corners;
    for (std::size_t i = 0; i < n; ++i) {
        const Vertex prev = open[(i + n - 1) % n], cur = open[i], next = open[(i + 1) % n];
        const Vertex d1{cur.x - prev.x, cur.y - prev.y}, d2{next.x - cur.x, next.y - cur.y};
        if (static_cast<long long>(d1.x) * d2.y - static_cast<long long>(d1.y) * d2.x != 0) corners.push_back(cur);
    }
    auto first = std::min_element(corners.begin(), corners.end(), [](Vertex a, Vertex b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
    });
    std::rotate(corners.begin(), first, corners.end());
    corners.push_back(corners.front());
    return corners;
}

// Cuts a closed walk into simple loops wherever it revisits a vertex.
void split_walk(const std::vector<Vertex>& walk, int stride, std::vector<GridRing>& out) {
    std::vector<Vertex> stack;
    std::unordered_map<std::int64_t, std::size_t> position;
    for (const Vertex& v : walk) {
        auto it = position.find(key(v, stride));
        if (it == position.end()) {
            position.emplace(key(v, stride), stack.size());
            stack.push_back(v);
            continue;
        }
        GridRing loop(stack.begin() + static_cast<long>(it->second), stack.end());
        loop.push_back(v);
        for (std::size_t i = it->second + 1; i < stack.size(); ++i) position.erase(key(stack[i], stride));
        stack.resize(it->second + 1);
        out.push_back(std::move(loop));
    }
}

std::vector<GridRing> trace(const std::vector<Edge>& edges, int stride) {
    std::unordered_map<std::int64_t, std::vector<std::size_t>> outgoing;
    for (std::size_t i = 0; i < edges.size(); ++i) outgoing[key(edges[i].from, stride)].push_back(i);
    std::vector<bool> used(edges.size(), false);
    std::vector<GridRing> rings;
    for (std::size_t start = 0; start < edges.size(); ++start) {
        if (used[start]) continue;
        std::vector<Vertex> walk{edges[start].from};
        std::size_t cur = start;
        for (;;) {
            used[cur] = true;
            walk.push_back(edges[cur].to);
            const Vertex d = direction(edges[cur]);
            std::size_t next = edges.size();
            for (Vertex want : {left_of(d), d, right_of(d)}) {
                for (std::size_t e : outgoing[key(edges[cur].to, stride)]) {
                    if (!used[e] && direction(edges[e]) == want) {
                        next = e;
                        break;
                    }
                }
                if (next != edges.size()) break;
            }
            if (next == edges.size()) break;
            cur = next;
        }
        if (!(walk.back() == walk.front())) throw std::logic_error("polygonize: open boundary walk");
        split_walk(walk, stride, rings);
    }
    return rings;
}

Ring to_world(const GridRing& ring, const GeoTransform& t) {
    Ring out;
    out.reserve(ring.size());
    for (const Vertex& v : ring) out.push_back(pixel_to_world(t, v.x, v.y));
    return out;
}

}  // namespace

std::vector<Detection> polygonize(const Components& components, const GeoTransform& transform,
                                  const Raster* probability) {
    const int w = components.width, h = components.height;
    if (probability && (probability->width != w || probability->height != h)) {
        throw std::invalid_argument("polygonize: probability raster size differs from labels");
    }
    const int stride = w + 1;
    std::vector<std::vector<Edge>> edges(static_cast<std::size_t>(components.count()));
    std::vector<double> prob_sum(edges.size(), 0.0);
    auto label_at = [&](int r, int c) { return r < 0 || c < 0 || r >= h || c >= w ? 0 : components.at(r, c); };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int k = components.at(r, c);
            if (k == 0) continue;
            auto& list = edges[static_cast<std::size_t>(k - 1)];
            if (label_at(r, c - 1) != k) list.push_back({{c, r}, {c, r + 1}});
            if (label_at(r + 1, c) != k) list.push_back({{c, r + 1}, {c + 1, r + 1}});
            if (label_at(r, c + 1) != k) list.push_back({{c + 1, r + 1}, {c + 1, r}});
            if (label_at(r - 1, c) != k) list.push_back({{c + 1, r}, {c, r}});
            if (probability) prob_sum[static_cast<std::size_t>(k - 1)] += probability->at(0, r, c);
        }
    }

    std::vector<Detection> out;
    out.reserve(edges.size());
    for (std::size_t k = 0; k < edges.size(); ++k) {
        std::vector<GridRing> exteriors, holes;
        for (const auto& ring : trace(edges[k], stride)) {
            GridRing s = simplify(ring);
            (twice_area(s) < 0 ? exteriors : holes).push_back(std::move(s));
        }
        Detection det;
        det.label = static_cast<int>(k + 1);
        det.pixel_count = components.sizes[k];
        det.area = static_cast<double>(det.pixel_count) * transform.pixel_area();
        if (probability) det.mean_probability = prob_sum[k] / static_cast<double>(det.pixel_count);
        for (const auto& e : exteriors) det.parts.push_back({to_world(e, transform), {}, "waste_dump"});
        for (const auto& hole : holes) {
            // Centre of the pixel just inside the hole, beside its first edge.
            const Vertex d{hole[1].x - hole[0].x, hole[1].y - hole[0].y};
            const Vertex unit{(d.x > 0) - (d.x < 0), (d.y > 0) - (d.y < 0)};
            const Vertex side = right_of(unit);
            const double px = hole[0].x + 0.5 * unit.x + 0.5 * side.x;
            const double py = hole[0].y + 0.5 * unit.y + 0.5 * side.y;
            std::size_t best = exteriors.size();
            long long best_area = 0;
            for (std::size_t e = 0; e < exteriors.size(); ++e) {
                const long long a = -twice_area(exteriors[e]);
                if (contains(exteriors[e], px, py) && (best == exteriors.size() || a < best_area)) {
                    best = e;
                    best_area = a;
                }
            }
            if (best == exteriors.size()) throw std::logic_error("polygonize: hole outside every exterior");
            det.parts[best].holes.push_back(to_world(hole, transform));
        }
        out.push_back(std::move(det));
    }
    return out;
}

}  // namespace dumpwatch
