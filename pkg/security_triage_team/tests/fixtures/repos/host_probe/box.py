"""Service fingerprinting helpers."""
import subprocess

SIGNATURES = {
    "nginx": "Server: nginx",
    "apache": "Server: Apache",
}


def match_signature(banner):
    for name, marker in SIGNATURES.items():
        if marker in banner:
            return name
    return None


def execute_command(hostinfo):
    command = "curl -s -I --max-time 5 " + hostinfo
    proc = subprocess.Popen(command, shell=True, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    out, _ = proc.communicate()
    return out.decode("utf-8", errors="replace")
