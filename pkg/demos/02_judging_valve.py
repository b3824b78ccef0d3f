"""Watch the valve tell new weather from weather it has already seen.

Six episodes arrive: haze, rain, snow, then the same three again. Signatures
come from the frozen initial encoder, so training length does not matter here
and one step per task keeps the demo fast.

    python demos/02_judging_valve.py
"""

from weather_experts import RunConfig, run_continual
from weather_experts.synth import family_statistics_separation


def main():
    sep = family_statistics_separation(n_samples=32)
    print("untrained-encoder separation (higher intra than inter is good):")
    print("  intra", {k: round(v, 3) for k, v in sep["intra"].items()})
    print("  inter", {k: round(v, 3) for k, v in sep["inter"].items()})

    stream = ["haze", "rain", "snow", "haze", "rain", "snow"]
    run = run_continual(RunConfig(task_sequence=stream, steps_per_task=1), None)
    print("\nepisode  family  decision  task  s_sum   threshold")
    for row in run.episode_rows:
        print(f"{row['episode']:7d}  {row['family']:6s}  {row['decision']:8s}  {row['task']:4d}  "
              f"{row['similarity']:.3f}   {row['threshold']:.4f}")


if __name__ == "__main__":
    main()
