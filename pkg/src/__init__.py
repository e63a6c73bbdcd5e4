# Side-Scan Sonar SLAM - Main Package
