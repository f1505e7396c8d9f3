import argparse

from box import execute_command, match_signature


def main():
    parser = argparse.ArgumentParser(description="Probe a host and match its server banner.")
    parser.add_argument("host")
    args = parser.parse_args()
    banner = execute_command(args.host)
    print(match_signature(banner) or "unknown")


if __name__ == "__main__":
    main()
