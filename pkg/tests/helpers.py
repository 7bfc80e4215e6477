from aegissat import crypto
from aegissat.bitstream import CNN_USAGE, FeatureSummary, SimBitstream, BehaviorId
from aegissat.behavioral import encode_cnn_params
from aegissat.package import NO_REGION, PackageMeta, PayloadKind, build_package, validate_package


def meta(version=1, kind=PayloadKind.AI_MODEL, seq=1, ts=1000, region=NO_REGION, nonce=b"\x07" * 12):
    return PackageMeta(version, kind, seq, ts, nonce, region)


def cnn_bitstream(usage=CNN_USAGE, features=FeatureSummary(), body=b"\xab" * 64):
    return SimBitstream(BehaviorId.CNN_V1, encode_cnn_params([[1, 0, -1]] * 3, 2), usage, features, body)


def pkg(keys, payload=b"model weights", **kw):
    return build_package(payload, meta(**kw), keys.device, keys.root_private, crypto.TEST)


def validate(p, keys, platform, stored=0, last_seq=0, now=1000, key="device"):
    return validate_package(
        p,
        platform.trusted_keys(),
        stored,
        last_seq,
        now,
        platform.freshness_window_ms,
        keys.device if key == "device" else key,
        platform.region_budgets(),
        crypto.TEST,
    )
