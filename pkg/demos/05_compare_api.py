"""The face-compare API client against the in-process mock service.

The client speaks a minimal protocol (multipart POST /compare, JSON
confidence in [0, 100]) with exponential-backoff retries and a shared
client-side rate limit. The mock runs in this process: deterministic
scoring through a toy embedder, plus a scripted-fault mode to show the
retry path.
"""
import numpy as np
import torch

from faceveil.api import FaceCompareClient
from faceveil.encoders import ToyFaceEmbedder
from faceveil.mock_server import MockCompareServer
from faceveil.synthetic import toy_face

torch.set_num_threads(1)

protected = [toy_face(i, size=24, seed=2)[0] for i in range(10)]
target, _ = toy_face(50, size=24, seed=2)
emb = ToyFaceEmbedder(size=24, seed=9)

with MockCompareServer(embedder=emb) as server:
    client = FaceCompareClient(
        server.endpoint, rate_limit_rps=50.0, backoff_base=0.05, backoff_factor=2.0
    )

    res = client.compare(protected[0], target)
    print(f"single compare: confidence {res.confidence:.2f} "
          f"in {res.latency_ms:.1f} ms")

    # scripted faults: the service throttles twice, the client retries
    server.push_script(429, 429)
    res = client.compare(protected[0], target)
    print(f"after two 429s:  confidence {res.confidence:.2f} "
          f"in {res.latency_ms:.1f} ms (backoff included)")

    results, summary = client.batch_compare(protected, target)
    print(f"\nbatch of {summary['n_items']}: "
          f"mean {summary['mean']:.2f}, median {summary['median']:.2f}, "
          f"std {summary['std']:.2f}, failures {summary['n_failures']}")

    gaps = np.diff(sorted(server.request_times)) * 1000
    print(f"request arrival spacing: min {gaps.min():.1f} ms "
          f"(client spaces request starts >= {1000 / 50.0:.1f} ms apart; "
          f"arrival times jitter by a few ms)")
