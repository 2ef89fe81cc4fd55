#include "seq2bf/schedule.hpp"

#include <algorithm>

#include "seq2bf/errors.hpp"

namespace seq2bf {

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::SeqB: return "seq-b";
        case Strategy::SeqF: return "seq-f";
        case Strategy::TokB: return "tok-b";
        case Strategy::TokF: return "tok-f";
        case Strategy::LeftToRight: return "l2r";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "seq-b") return Strategy::SeqB;
    if (name == "seq-f") return Strategy::SeqF;
    if (name == "tok-b") return Strategy::TokB;
    if (name == "tok-f") return Strategy::TokF;
    if (name == "l2r") return Strategy::LeftToRight;
    throw ConfigError("unknown strategy: " + name);
}

int Layout::slot_of_side(int side) const {
    if (side < 0 && -side <= backward_len) return backward_len + side;
    if (side > 0 && side <= forward_len) return backward_len + phrase_len + side - 1;
    throw ConstraintError("side coordinate out of range: " + std::to_string(side));
}

int Layout::outward_position(Direction dir, int j) const {
    const int zero_token = (phrase_len + 1) / 2;  // 1-based phrase token at position 0
    if (dir == Direction::Backward) return (1 - zero_token) - j;
    return (phrase_len - zero_token) + j;
}

Layout assign_positions(int backward_len, int phrase_len, int forward_len) {
    if (phrase_len < 1) throw ConstraintError("assign_positions: phrase is mandatory (L >= 1)");
    if (backward_len < 0 || forward_len < 0) {
        throw ConstraintError("assign_positions: negative side length");
    }
    Layout layout;
    layout.backward_len = backward_len;
    layout.phrase_len = phrase_len;
    layout.forward_len = forward_len;
    layout.positions.resize(layout.total());

    const int zero_token = (phrase_len + 1) / 2;
    for (int k = 1; k <= phrase_len; ++k) {
        layout.positions[backward_len + k - 1] = k - zero_token;
    }
    for (int j = 1; j <= backward_len; ++j) {
        layout.positions[backward_len - j] = layout.outward_position(Direction::Backward, j);
    }
    for (int j = 1; j <= forward_len; ++j) {
        layout.positions[backward_len + phrase_len + j - 1] =
            layout.outward_position(Direction::Forward, j);
    }
    return layout;
}

namespace {

// Strategy order over abstract side lengths; used both for the real tokens
// and, run with lengths M+1/N+1, to place the marker events.
std::vector<std::pair<Direction, int>> base_order(Strategy strategy, int mb, int nf) {
    std::vector<std::pair<Direction, int>> order;
    order.reserve(mb + nf);
    switch (strategy) {
        case Strategy::SeqB:
            for (int j = 1; j <= mb; ++j) order.emplace_back(Direction::Backward, j);
            for (int j = 1; j <= nf; ++j) order.emplace_back(Direction::Forward, j);
            break;
        case Strategy::SeqF:
            for (int j = 1; j <= nf; ++j) order.emplace_back(Direction::Forward, j);
            for (int j = 1; j <= mb; ++j) order.emplace_back(Direction::Backward, j);
            break;
        case Strategy::TokB:
        case Strategy::TokF: {
            int ib = 1, jf = 1;
            Direction turn =
                strategy == Strategy::TokB ? Direction::Backward : Direction::Forward;
            while (ib <= mb || jf <= nf) {
                if (turn == Direction::Backward && ib > mb) turn = Direction::Forward;
                if (turn == Direction::Forward && jf > nf) turn = Direction::Backward;
                if (turn == Direction::Backward) {
                    order.emplace_back(Direction::Backward, ib++);
                } else {
                    order.emplace_back(Direction::Forward, jf++);
                }
                turn = turn == Direction::Backward ? Direction::Forward : Direction::Backward;
            }
            break;
        }
        case Strategy::LeftToRight:
            throw ConstraintError("build_schedule: l2r has no bidirectional schedule");
    }
    return order;
}

}  // namespace

std::vector<Event> build_schedule(Strategy strategy, int backward_len, int forward_len) {
    if (backward_len < 0 || forward_len < 0) {
        throw ConstraintError("build_schedule: negative side length");
    }
    const auto order = base_order(strategy, backward_len + 1, forward_len + 1);
    std::vector<Event> events;
    events.reserve(order.size());
    for (const auto& [dir, j] : order) {
        const int limit = dir == Direction::Backward ? backward_len : forward_len;
        Event ev;
        ev.direction = dir;
        if (j == limit + 1) {
            ev.marker = true;
            ev.side = 0;
        } else {
            ev.marker = false;
            ev.side = dir == Direction::Backward ? -j : j;
        }
        events.push_back(ev);
    }
    return events;
}

std::vector<int> order_stamps(const std::vector<Event>& schedule, const Layout& layout) {
    std::vector<int> stamps(layout.total(), -1);
    for (int s = layout.phrase_begin(); s < layout.phrase_end(); ++s) stamps[s] = 0;
    int rank = 0;
    for (const auto& ev : schedule) {
        if (ev.marker) continue;
        ++rank;
        const int slot = layout.slot_of_side(ev.side);
        if (stamps[slot] != -1) {
            throw ConstraintError("order_stamps: slot generated twice");
        }
        stamps[slot] = rank;
    }
    if (std::count(stamps.begin(), stamps.end(), -1) != 0) {
        throw ConstraintError("order_stamps: schedule does not cover the layout");
    }
    return stamps;
}

AttnMask build_decoder_mask(const std::vector<int>& stamps) {
    AttnMask mask;
    mask.size = static_cast<int>(stamps.size());
    mask.allow.assign(static_cast<size_t>(mask.size) * mask.size, 0);
    for (int p = 0; p < mask.size; ++p) {
        for (int q = 0; q < mask.size; ++q) {
            mask.set(p, q, stamps[q] <= stamps[p]);
        }
    }
    return mask;
}

AttnMask causal_mask(int size) {
    AttnMask mask;
    mask.size = size;
    mask.allow.assign(static_cast<size_t>(size) * size, 0);
    for (int p = 0; p < size; ++p) {
        for (int q = 0; q <= p; ++q) mask.set(p, q, true);
    }
    return mask;
}

int read_anchor(const std::vector<Event>& schedule, const Layout& layout, size_t event_index) {
    if (event_index >= schedule.size()) {
        throw ConstraintError("read_anchor: event index out of range");
    }
    int last_real_slot = -1;
    for (size_t i = 0; i < event_index; ++i) {
        if (!schedule[i].marker) last_real_slot = layout.slot_of_side(schedule[i].side);
    }
    if (last_real_slot >= 0) return last_real_slot;
    return schedule[event_index].direction == Direction::Backward ? layout.phrase_begin()
                                                                  : layout.phrase_end() - 1;
}

ResolvedSchedule resolve_schedule(Strategy strategy, const Layout& layout) {
    ResolvedSchedule rs;
    rs.events = build_schedule(strategy, layout.backward_len, layout.forward_len);
    rs.stamps = order_stamps(rs.events, layout);
    rs.mask = build_decoder_mask(rs.stamps);
    rs.anchors.reserve(rs.events.size());
    int last_real_slot = -1;
    for (const auto& ev : rs.events) {
        if (last_real_slot >= 0) {
            rs.anchors.push_back(last_real_slot);
        } else {
            rs.anchors.push_back(ev.direction == Direction::Backward ? layout.phrase_begin()
                                                                     : layout.phrase_end() - 1);
        }
        if (!ev.marker) last_real_slot = layout.slot_of_side(ev.side);
    }
    return rs;
}

std::string render_mask(const AttnMask& mask) {
    std::string out;
    out.reserve(static_cast<size_t>(mask.size) * (mask.size + 1));
    for (int p = 0; p < mask.size; ++p) {
        for (int q = 0; q < mask.size; ++q) out.push_back(mask.allowed(p, q) ? '.' : '#');
        out.push_back('\n');
    }
    return out;
}

}  // namespace seq2bf
