#!/usr/bin/env python3
"""
Log Statistics Generator
Summarizes dyno lab logs: stage timings, post-training progress, ER results, errors.

Usage:
    python scripts/log_stats.py [log_file]
    python scripts/log_stats.py                          # Analyzes most recent log
    python scripts/log_stats.py runs/logs/dyno_20250119.log
"""

import os
import re
import sys
from pathlib import Path
from datetime import datetime
from collections import defaultdict
import statistics

LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']

COMPLETED = re.compile(r'\| ([A-Za-z][\w\-\[\] ]*?) completed in (\d+\.\d+)s')
POST_STEP = re.compile(r'\[([\w\-]+)\] step (\d+): reward (-?\d+\.\d+) clip (\d+\.\d+) eval L1 (\d+\.\d+)')
SFT_STEP = re.compile(r'SFT step (\d+): train (\d+\.\d+) eval (\d+\.\d+)')
ER_LINE = re.compile(r'ER over (\d+) episodes: avg (\d+\.\d+), ratio (\d+\.\d+)')
GRAD_CHECK = re.compile(r'grad_check rel err (\d\.\d+e[-+]\d+)')


def analyze_logs(log_file):
    """Analyze log file and collect statistics."""

    stats = {
        'levels': defaultdict(int),
        'modules': defaultdict(int),
        'errors': [],
        'stage_times': defaultdict(list),
        'posttrain': defaultdict(list),   # label -> [(step, reward, clip, eval_l1)]
        'sft': [],                        # (step, train, eval)
        'er': [],                         # (episodes, avg_er, ratio)
        'grad_checks': [],
        'forced': 0,
    }

    with open(log_file, 'r', encoding='utf-8') as f:
        for line in f:
            for level in LEVELS:
                if f'| {level}' in line:
                    stats['levels'][level] += 1
                    break

            match = re.search(r'\| ([a-zA-Z0-9_.]+) \|', line)
            if match:
                stats['modules'][match.group(1)] += 1

            done = COMPLETED.search(line)
            if done:
                stats['stage_times'][done.group(1).strip()].append(float(done.group(2)))

            step = POST_STEP.search(line)
            if step:
                label = step.group(1)
                stats['posttrain'][label].append(
                    (int(step.group(2)), float(step.group(3)), float(step.group(4)), float(step.group(5)))
                )

            sft = SFT_STEP.search(line)
            if sft:
                stats['sft'].append((int(sft.group(1)), float(sft.group(2)), float(sft.group(3))))

            er = ER_LINE.search(line)
            if er:
                stats['er'].append((int(er.group(1)), float(er.group(2)), float(er.group(3))))

            gc = GRAD_CHECK.search(line)
            if gc:
                stats['grad_checks'].append(float(gc.group(1)))

            if '(forced)' in line:
                stats['forced'] += 1

            if '| ERROR' in line or '| CRITICAL' in line:
                stats['errors'].append(line.strip())

    return stats


def print_report(stats):
    """Print formatted statistics report."""

    print("=" * 70)
    print(f"LOG ANALYSIS REPORT - {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("=" * 70)
    print()

    print("[LOG LEVELS SUMMARY]")
    print("-" * 70)
    total_logs = sum(stats['levels'].values())
    for level in LEVELS:
        count = stats['levels'].get(level, 0)
        pct = (count / total_logs * 100) if total_logs > 0 else 0
        print(f"  {level:10s}: {count:6d} ({pct:5.1f}%)")
    print(f"  {'TOTAL':10s}: {total_logs:6d}")
    print()

    print("[STAGE TIMINGS]")
    print("-" * 70)
    if stats['stage_times']:
        for stage, times in sorted(stats['stage_times'].items()):
            print(f"  {stage:32s}: runs {len(times):3d}  mean {statistics.mean(times):8.2f}s  max {max(times):8.2f}s")
    else:
        print("  No completed stages found in logs")
    print()

    print("[SFT]")
    print("-" * 70)
    if stats['sft']:
        first, last = stats['sft'][0], stats['sft'][-1]
        print(f"  Eval loss: {first[2]:.5f} (step {first[0]}) -> {last[2]:.5f} (step {last[0]})")
    if stats['grad_checks']:
        worst = max(stats['grad_checks'])
        flag = "[OK]" if worst < 1e-4 else "[WARN]"
        print(f"  Gradient checks: {len(stats['grad_checks'])}, worst rel err {worst:.3e} {flag}")
    if not (stats['sft'] or stats['grad_checks']):
        print("  No SFT data found in logs")
    print()

    print("[POST-TRAINING]")
    print("-" * 70)
    if stats['posttrain']:
        for label, rows in sorted(stats['posttrain'].items()):
            rewards = [r[1] for r in rows]
            clips = [r[2] for r in rows]
            l1_first, l1_last = rows[0][3], rows[-1][3]
            trend = "[OK] improving" if l1_last < l1_first else "[WARN] not improving"
            print(f"  {label}:")
            print(f"    Logged steps: {len(rows)} (last {rows[-1][0]})")
            print(f"    Reward:       mean {statistics.mean(rewards):.4f}, last {rewards[-1]:.4f}")
            print(f"    Clip frac:    mean {statistics.mean(clips):.3f}")
            print(f"    Eval L1:      {l1_first:.5f} -> {l1_last:.5f}  {trend}")
    else:
        print("  No post-training steps found in logs")
    print()

    print("[EFFECTIVE RANK]")
    print("-" * 70)
    if stats['er']:
        for i, (n, avg, ratio) in enumerate(stats['er'], 1):
            print(f"  {i}. {n} episodes: ER {avg:.3f}, ratio {ratio:.4f}")
    else:
        print("  No ER reports found in logs")
    print()

    print("[TOP ACTIVE MODULES]")
    print("-" * 70)
    top_modules = sorted(stats['modules'].items(), key=lambda x: x[1], reverse=True)[:10]
    for module, count in top_modules:
        module_short = module if len(module) <= 45 else module[:42] + '...'
        print(f"  {module_short:48s}: {count:6d}")
    print()

    print("[ERROR SUMMARY]")
    print("-" * 70)
    if stats['forced']:
        print(f"  Forced config-hash overrides: {stats['forced']}")
    if stats['errors']:
        print(f"  Total Errors: {len(stats['errors'])}")
        print("  Most Recent Errors:")
        for i, error in enumerate(stats['errors'][-5:], 1):
            parts = error.split('|')
            error_msg = parts[3].strip() if len(parts) >= 4 else error
            error_short = error_msg[:100] + '...' if len(error_msg) > 100 else error_msg
            print(f"    {i}. {error_short}")
    else:
        print("  Total Errors: 0")
        print("  Status:       [OK] No errors found!")

    print()
    print("=" * 70)


def _default_log_dir() -> Path:
    if os.getenv('DYNO_LOG_DIR'):
        return Path(os.environ['DYNO_LOG_DIR'])
    if os.getenv('DYNO_OUT'):
        return Path(os.environ['DYNO_OUT']) / 'logs'
    return Path('logs')


def main():
    """Main entry point."""

    if len(sys.argv) > 1:
        log_file = Path(sys.argv[1])
        if not log_file.exists():
            print(f"Error: Log file not found: {log_file}")
            sys.exit(1)
    else:
        log_dir = _default_log_dir()
        if not log_dir.exists():
            print(f"Error: {log_dir}/ directory not found!")
            sys.exit(1)

        log_files = sorted(log_dir.glob('dyno_*.log'), reverse=True)
        if not log_files:
            print(f"No log files found in {log_dir}/ directory!")
            sys.exit(1)

        log_file = log_files[0]

    print(f"Analyzing: {log_file}")
    print(f"File size: {log_file.stat().st_size / 1024:.1f} KB")
    print()

    stats = analyze_logs(log_file)
    print_report(stats)


if __name__ == '__main__':
    main()
