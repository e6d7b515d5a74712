"""Independent reference implementations used as test oracles."""

import math

R = 6371.0


def unit(p):
    lon, lat = math.radians(p[0]), math.radians(p[1])
    return (math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat))


def great_circle_km(a, b):
    # spherical law of cosines on unit vectors, distinct from the haversine route
    dot = sum(x * y for x, y in zip(unit(a), unit(b)))
    return R * math.acos(max(-1.0, min(1.0, dot)))


def offset_point(p, km, bearing_deg):
    """Destination point ``km`` away from ``p`` along a great circle."""
    d = km / R
    lat1, lon1, brg = math.radians(p[1]), math.radians(p[0]), math.radians(bearing_deg)
    lat2 = math.asin(math.sin(lat1) * math.cos(d) + math.cos(lat1) * math.sin(d) * math.cos(brg))
    lon2 = lon1 + math.atan2(math.sin(brg) * math.sin(d) * math.cos(lat1), math.cos(d) - math.sin(lat1) * math.sin(lat2))
    return type(p)(math.degrees(lon2), math.degrees(lat2))


def brute_force_leader(ranked, towers, diameter_km):
    """Literal transcription of the leader rule: returns [(member set, (lon, lat))]."""
    remaining = list(ranked)
    out = []
    while remaining:
        leader = remaining.pop(0)
        group = [leader] + [ti for ti in remaining
                            if great_circle_km(towers[leader.tower], towers[ti.tower]) <= diameter_km / 2 + 1e-12]
        remaining = [ti for ti in remaining if ti not in group]
        w = sum(ti.call_days for ti in group)
        lon = sum(towers[ti.tower][0] * ti.call_days for ti in group) / w
        lat = sum(towers[ti.tower][1] * ti.call_days for ti in group) / w
        out.append((frozenset(ti.tower for ti in group), (lon, lat)))
    return out


def confusion_by_hand(y_true, y_pred):
    tp = fp = tn = fn = 0
    for t, p in zip(y_true, y_pred):
        if t and p:
            tp += 1
        elif not t and p:
            fp += 1
        elif not t and not p:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def auc_by_pairs(y_true, scores):
    """Probability a random positive outscores a random negative; ties count half."""
    pos = [s for s, y in zip(scores, y_true) if y == 1]
    neg = [s for s, y in zip(scores, y_true) if y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def oracle_hidden_by_scan(visits, depart, arrive):
    """Brute-force interval scan over a user's true visits."""
    def at(t):
        hits = [v for v in visits if v.start <= t < v.end]
        assert len(hits) == 1
        return hits[0]

    o, d = at(depart), at(arrive)
    for v in visits:
        if v.start >= o.end and v.end <= d.start and v.location not in (o.location, d.location):
            return 1
    return 0
