"""Scheduling, fusion and freezing in the expert library, without any training.

    python demos/03_expert_library.py
"""

from weather_experts import ExpertLibrary, fusion_weights
from weather_experts.library import ema_update, expert_score


def main():
    lib = ExpertLibrary(width=8, reduction=4, capacity=6)
    first = lib.handle_task(is_new=True, task_id=0)
    print("task 0 (new, empty library) trains", first.new_ids)
    ema_update(lib.get(0), task_loss=0.08)
    lib.freeze_task_experts(0)

    second = lib.handle_task(is_new=True, task_id=1)
    print("task 1 (new) reuses", second.transfer_ids, "and trains", second.new_ids)
    for rec in lib.experts:
        print(f"  expert {rec.id}: P={rec.performance:.3f} uses={rec.usage_count} "
              f"score={expert_score(rec):.3f} frozen={rec.frozen}")

    print("\nfusion weights for per-expert losses [0.1, 0.2]:", fusion_weights([0.1, 0.2]).round(5))
    print("fusion weights for [0.05, 0.05, 1e6]:", fusion_weights([0.05, 0.05, 1e6]).round(5))

    again = lib.handle_task(is_new=False, task_id=0)
    print("\ntask 0 comes back: route", again.expert_ids, "new", again.new_ids)
    print("frozen digests intact:", lib.verify_frozen() == [])


if __name__ == "__main__":
    main()
