"""Smoke test for the arnnsci_py extension module."""

import json
import math
import sys
from pathlib import Path

import arnnsci_py as ap

FIXTURES = Path(__file__).resolve().parents[3] / "fixtures"


def main():
    h2 = ap.IntegralTable.from_path(str(FIXTURES / "h2.fcidump"))
    ref = json.loads((FIXTURES / "h2.ref").read_text())
    gs = ap.fci(h2)
    assert abs(gs.energy - ref["fci_energy"]) < 1e-8, (gs.energy, ref["fci_energy"])
    assert abs(sum(a * a for a in gs.amplitudes) - 1.0) < 1e-12
    assert ap.count_sector(8, 4) == 36

    h4 = ap.IntegralTable.from_path(str(FIXTURES / "h4.fcidump"))
    assert h4.hartree_fock() == "00110011"
    hf = ap.build_seed("hf", h4)
    assert len(hf) == 1 and abs(hf.energy - h4.matrix_element("00110011", "00110011")) < 1e-12

    model = ap.ArnnModel(h4.n_spin_orbitals, seed=1)
    total = math.fsum(math.exp(model.log_prob(format(i, "08b"))) for i in range(256))
    assert abs(total - 1.0) < 1e-10, total
    losses = model.train({"00110011": 900, "01010101": 100}, epochs=50, learning_rate=0.01)
    assert losses[-1] < losses[0]
    samples = model.sample(1000, beta=1.0, seed=3, table=h4)
    assert all(h4.in_sector(s) for s, _, _ in samples)

    out = ap.run(overrides={
        "fcidump": str(FIXTURES / "h4.fcidump"),
        "seed_kind": "cisd",
        "max_iterations": "3",
        "n_network_samples": "2e4",
        "epochs": "20",
    })
    assert all(b <= a + 1e-12 for a, b in zip(out.energies, out.energies[1:]))
    print(f"ok: E_FCI(H2) = {gs.energy:.10f}, H4 run {len(out.energies)} records, final {out.energies[-1]:.10f}")


if __name__ == "__main__":
    sys.exit(main())
