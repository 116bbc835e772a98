"""Watch a filtered-x LMS controller converge.

Single speaker, single error microphone, both paths plain delays, so the
optimum drive has the closed form W = -P/S.  The script trains on a 500 Hz
tone, prints the windowed residual as it falls, and compares the learned
response against the closed form at the tone frequency.
"""

import numpy as np

from headrest.acoustics import FirPath
from headrest.anc import FxlmsConfig, PlantSet, train_fxlms

FS = 8000


def delay(n, gain=1.0):
    taps = np.zeros(n + 1)
    taps[n] = gain
    return FirPath(taps=taps, sample_rate=FS)


plant = PlantSet(
    primary_paths=(delay(8),),
    secondary_paths=((delay(4, 0.5),),),
    reference_path=delay(0),
)

t = np.arange(120_000) / FS
tone = np.sin(2 * np.pi * 500.0 * t)
filt = train_fxlms(
    plant, 0, FxlmsConfig(step_size=0.0005, max_iterations=120_000), excitation=tone,
    collect_trace=True,
)

print("windowed residual while training:")
for row in filt.trace["windows"]:
    bar = "#" * max(0, int(60 + row["residual_db"]))
    print(f"  {row['sample']:7d}  {row['residual_db']:8.1f} dB  {bar}")
print(f"final residual: {filt.residual_power_db:.1f} dB, converged={filt.converged}")

resp = np.fft.rfft(filt.taps[0].astype(float), 1 << 14)
freqs = np.fft.rfftfreq(1 << 14, 1.0 / FS)
w_hat = resp[np.argmin(np.abs(freqs - 500.0))]
z = np.exp(-2j * np.pi * 500.0 / FS)
w_opt = -(z**8) / (0.5 * z**4)
print(f"\nlearned W(500 Hz) = {abs(w_hat):.4f} @ {np.degrees(np.angle(w_hat)):7.2f} deg")
print(f"optimum -P/S      = {abs(w_opt):.4f} @ {np.degrees(np.angle(w_opt)):7.2f} deg")
